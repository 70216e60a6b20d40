"""Posture-sequence risk assessment: run-length encoding, maximum-holding-time
breaches, frequency/proportion statistics and OWAS action levels.

Window predictions come from 1.0 s windows at 50% overlap, so a run of n
windows spans (n+1)*0.5 seconds. Frequency is defined as runs per minute of
total assessed time, the only dimensionally consistent reading of a
times-per-minute figure over run counts. The reported max holding time is
the longest single run of a posture; detected-hold-style columns in
downstream reports map onto it.

TR carries no maximum holding time (it is neither comfortable nor
uncomfortable) and therefore never breaches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .postures import ALL_LABELS, COMFORTABLE, OWAS_ASSESSED, UNCOMFORTABLE, coerce_label

WINDOW_HALF_S = 0.5  # seconds advanced per extra overlapped window

MHT_UNCOMFORTABLE_S = 30.0
MHT_COMFORTABLE_S = 180.0


@dataclass
class PostureRun:
    """A maximal run of identical window predictions."""

    label: str
    count: int

    def __post_init__(self) -> None:
        self.label = coerce_label(self.label)
        if self.count < 1:
            raise ValueError("run length must be >= 1")

    @property
    def duration_s(self) -> float:
        return (self.count + 1) * WINDOW_HALF_S


class RunLengthEncoder:
    """Streaming run-length state; feeding labels one by one matches the batch
    encoder exactly."""

    def __init__(self) -> None:
        self._runs: list[PostureRun] = []
        self._label: str | None = None
        self._count = 0

    def push(self, label: str) -> None:
        label = coerce_label(str(label))
        if label == self._label:
            self._count += 1
        else:
            self._flush()
            self._label = label
            self._count = 1

    def _flush(self) -> None:
        if self._label is not None:
            self._runs.append(PostureRun(self._label, self._count))

    def finish(self) -> list[PostureRun]:
        self._flush()
        self._label = None
        self._count = 0
        return self._runs


def run_length_encode(labels) -> list[PostureRun]:
    """Maximal runs of equal labels, in order."""
    labels = list(labels)
    if not labels:
        raise ValueError("cannot encode an empty label sequence")
    enc = RunLengthEncoder()
    for label in labels:
        enc.push(str(label))
    return enc.finish()


@dataclass
class ErgoThresholds:
    """Per-label maximum holding times, scale factor and OWAS cutoffs."""

    mht_s: dict[str, float] = field(default_factory=lambda: default_mht())
    scale: float = 1.0
    owas_cutoffs: tuple[float, float] = (0.20, 0.50)

    def __post_init__(self) -> None:
        for label, value in self.mht_s.items():
            coerce_label(label)
            if value <= 0:
                raise ValueError(f"MHT for {label} must be > 0, got {value}")
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        lo, hi = self.owas_cutoffs
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"OWAS cutoffs must be strictly increasing in (0,1), got {self.owas_cutoffs}")

    def effective_mht(self, label: str) -> float:
        return self.mht_s[label] * self.scale


def default_mht() -> dict[str, float]:
    mht = {}
    for label in ALL_LABELS:
        if label in UNCOMFORTABLE:
            mht[label] = MHT_UNCOMFORTABLE_S
        elif label in COMFORTABLE:
            mht[label] = MHT_COMFORTABLE_S
        else:  # TR: no holding-time rule
            mht[label] = math.inf
    return mht


def owas_level(proportion: float, cutoffs: tuple[float, float] = (0.20, 0.50)) -> str:
    """Action level from the posture's proportion of total time.

    I: no action needed (<= first cutoff, boundary inclusive); II: correction
    soon; III: correction immediately (strictly above the second cutoff).
    """
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion must be in [0,1], got {proportion}")
    lo, hi = cutoffs
    if proportion <= lo:
        return "I"
    if proportion <= hi:
        return "II"
    return "III"


@dataclass
class ErgoLabelStats:
    label: str
    breach_count: int
    breach_duration_s: float
    max_hold_s: float
    frequency_per_min: float
    proportion: float
    owas: str | None  # None for labels outside the OWAS-assessed set


@dataclass
class ErgoReport:
    rows: dict[str, ErgoLabelStats]
    total_duration_s: float
    mht_scale: float

    def __getitem__(self, label: str) -> ErgoLabelStats:
        return self.rows[label]


def assess(runs: list[PostureRun], th: ErgoThresholds | None = None) -> ErgoReport:
    """Per-label breach/frequency/proportion statistics and OWAS levels.

    Covers the full label universe; labels absent from the runs report zeros.
    A breach is a run held strictly longer than the (scaled) threshold.
    """
    if not runs:
        raise ValueError("cannot assess an empty run list")
    th = th or ErgoThresholds()
    for run in runs:
        if run.label not in th.mht_s:
            raise ValueError(f"no threshold defined for label {run.label}")
    total_s = sum(r.duration_s for r in runs)
    total_min = total_s / 60.0
    rows: dict[str, ErgoLabelStats] = {}
    for label in ALL_LABELS:
        mine = [r for r in runs if r.label == label]
        durations = [r.duration_s for r in mine]
        limit = th.effective_mht(label)
        breaches = [d for d in durations if d > limit]
        proportion = sum(durations) / total_s
        rows[label] = ErgoLabelStats(
            label=label,
            breach_count=len(breaches),
            breach_duration_s=sum(breaches),
            max_hold_s=max(durations, default=0.0),
            frequency_per_min=len(mine) / total_min,
            proportion=proportion,
            owas=owas_level(proportion, th.owas_cutoffs) if label in OWAS_ASSESSED else None,
        )
    return ErgoReport(rows=rows, total_duration_s=total_s, mht_scale=th.scale)


@dataclass
class ComparisonRow:
    label: str
    truth: ErgoLabelStats
    predicted: ErgoLabelStats

    @property
    def owas_agrees(self) -> bool:
        return self.truth.owas == self.predicted.owas


def compare_assessments(report_truth: ErgoReport, report_pred: ErgoReport) -> list[ComparisonRow]:
    """Side-by-side ground-truth vs recognized-posture assessment."""
    if set(report_truth.rows) != set(report_pred.rows):
        raise ValueError("reports cover different label universes")
    return [ComparisonRow(label, report_truth.rows[label], report_pred.rows[label])
            for label in ALL_LABELS]


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def write_ergo_csv(report: ErgoReport, path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write("label,breach_count,breach_duration_s,max_hold_s,"
                 "frequency_per_min,proportion,owas_level\n")
        for label in ALL_LABELS:
            s = report.rows[label]
            fh.write(f"{label},{s.breach_count},{s.breach_duration_s:.1f},{s.max_hold_s:.1f},"
                     f"{s.frequency_per_min:.4f},{s.proportion:.6f},{s.owas or ''}\n")


def write_comparison_csv(rows: list[ComparisonRow], path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write("label,breach_count_g,breach_count_i,breach_duration_s_g,breach_duration_s_i,"
                 "max_hold_s_g,max_hold_s_i,frequency_per_min_g,frequency_per_min_i,"
                 "proportion_g,proportion_i,owas_g,owas_i,owas_agree\n")
        for row in rows:
            g, p = row.truth, row.predicted
            fh.write(f"{row.label},{g.breach_count},{p.breach_count},"
                     f"{g.breach_duration_s:.1f},{p.breach_duration_s:.1f},"
                     f"{g.max_hold_s:.1f},{p.max_hold_s:.1f},"
                     f"{g.frequency_per_min:.4f},{p.frequency_per_min:.4f},"
                     f"{g.proportion:.6f},{p.proportion:.6f},"
                     f"{g.owas or ''},{p.owas or ''},{int(row.owas_agrees)}\n")


def write_predictions_csv(starts, labels, path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write("window_start,label\n")
        for start, label in zip(starts, labels):
            fh.write(f"{float(start):.3f},{label}\n")


def read_predictions_csv(path: str | Path) -> tuple[list[float], list[str]]:
    starts: list[float] = []
    labels: list[str] = []
    with Path(path).open() as fh:
        header = fh.readline().rstrip("\n")
        if header != "window_start,label":
            raise ValueError(f"{path}: expected header 'window_start,label'")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            start, _, label = line.partition(",")
            try:
                starts.append(float(start))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed window_start {start!r}") from None
            labels.append(coerce_label(label))
    return starts, labels
