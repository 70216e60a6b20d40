"""Confusion matrices, Macro F1, performance change and channel-group importance."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .pipeline import LabeledDataset
from .postures import channel_groups


@dataclass
class ConfusionMatrix:
    """C x C counts, rows = true class, columns = predicted class."""

    counts: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.labels = tuple(self.labels)
        c = len(self.labels)
        if self.counts.shape != (c, c):
            raise ValueError(f"counts must be {c}x{c}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels: tuple[str, ...]) -> "ConfusionMatrix":
        index = {l: i for i, l in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
            counts[index[str(t)], index[str(p)]] += 1
        return cls(counts, labels)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Rows scaled to proportions, for display."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.counts / sums
        return np.where(sums > 0, out, 0.0)


def class_f1_scores(cm: ConfusionMatrix) -> dict[str, float]:
    """Per-class F1 for every class with at least one true or predicted instance.

    F1 is 0 when precision + recall is 0 (no true positives at all).
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    scores: dict[str, float] = {}
    for i, label in enumerate(cm.labels):
        tp = cm.counts[i, i]
        fp = cm.counts[:, i].sum() - tp
        fn = cm.counts[i, :].sum() - tp
        if tp + fp + fn == 0:
            continue  # class absent from truth and predictions
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        if precision + recall == 0.0:
            scores[label] = 0.0
        else:
            scores[label] = 2.0 * precision * recall / (precision + recall)
    return scores


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1 over the contributing classes."""
    scores = class_f1_scores(cm)
    return float(np.mean(list(scores.values())))


def performance_change(f1: float, baseline: float) -> float:
    """Percent change 100*(f1 - baseline)/baseline, to one decimal place."""
    if baseline <= 0:
        raise ValueError(f"baseline must be > 0, got {baseline}")
    return round(100.0 * (f1 - baseline) / baseline, 1)


@dataclass
class ChannelGroup:
    """A placement/unit channel group, e.g. chest_acc -> channels 6,7,8."""

    name: str
    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.indices) == 0:
            raise ValueError("empty channel group")


def default_channel_groups() -> list[ChannelGroup]:
    """The 10 placement x unit groups partitioning the 30 channels."""
    return [ChannelGroup(name, idx) for name, idx in channel_groups().items()]


@dataclass
class ImportanceResult:
    baseline_f1: float
    deltas: dict[str, list[float]]        # group -> per-repeat delta Macro F1
    mean_delta: dict[str, float] = field(init=False)
    std_delta: dict[str, float] = field(init=False)

    def __post_init__(self) -> None:
        self.mean_delta = {g: float(np.mean(d)) for g, d in self.deltas.items()}
        self.std_delta = {g: float(np.std(d)) for g, d in self.deltas.items()}


def permutation_importance(predict_fn: Callable[[np.ndarray], np.ndarray],
                           ds: LabeledDataset, groups: list[ChannelGroup] | None = None,
                           repeats: int = 5, seed: int = 0) -> ImportanceResult:
    """Macro F1 change after shuffling each channel group across images.

    One permutation of images per (group, repeat); all member channels of an
    image move together, so within-window temporal structure is preserved.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if groups is None:
        groups = default_channel_groups()
    channels = ds.data.shape[2]
    seen: set[int] = set()
    for g in groups:
        overlap = seen.intersection(g.indices)
        if overlap:
            raise ValueError(f"channel group {g.name} overlaps channels {sorted(overlap)}")
        if max(g.indices) >= channels:
            raise ValueError(f"channel group {g.name} exceeds the {channels}-channel layout")
        seen.update(g.indices)
    labels = tuple(sorted(set(str(l) for l in ds.labels)))
    baseline_cm = ConfusionMatrix.from_predictions(ds.labels, predict_fn(ds.data), labels)
    baseline = macro_f1(baseline_cm)
    deltas: dict[str, list[float]] = {}
    for gi, group in enumerate(groups):
        idx = list(group.indices)
        runs = []
        for r in range(repeats):
            rng = np.random.default_rng([seed, gi, r])
            perm = rng.permutation(len(ds))
            shuffled = ds.data.copy()
            shuffled[:, :, idx] = ds.data[perm][:, :, idx]
            cm = ConfusionMatrix.from_predictions(ds.labels, predict_fn(shuffled), labels)
            runs.append(macro_f1(cm) - baseline)
        deltas[group.name] = runs
    return ImportanceResult(baseline_f1=baseline, deltas=deltas)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

def write_confusion_csv(cm: ConfusionMatrix, path: str | Path, normalized: bool = False) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write("true\\pred," + ",".join(cm.labels) + "\n")
        rows = cm.row_normalized() if normalized else cm.counts
        for i, label in enumerate(cm.labels):
            cells = (f"{v:.4f}" if normalized else str(int(v)) for v in rows[i])
            fh.write(label + "," + ",".join(cells) + "\n")


def write_metrics_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    scores = class_f1_scores(cm)
    with Path(path).open("w", newline="\n") as fh:
        fh.write("class,f1\n")
        for label in cm.labels:
            if label in scores:
                fh.write(f"{label},{scores[label]:.6f}\n")
        fh.write(f"macro,{macro_f1(cm):.6f}\n")


def write_importance_csv(result: ImportanceResult, path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write("group,mean_delta_f1,std_delta_f1,baseline_f1\n")
        for name in result.deltas:
            fh.write(f"{name},{result.mean_delta[name]:.6f},"
                     f"{result.std_delta[name]:.6f},{result.baseline_f1:.6f}\n")
