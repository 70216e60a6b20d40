"""Raw record streams to normalized, labeled motion images and splits.

Stream CSV format (the package-wide interchange format):
    header ``t,ch00..chNN,label``; ``t`` in decimal seconds, channel values
    as decimal reals, label as two-letter posture code.

Dataset manifests are plain-text ``key=value`` files. Prepared datasets are
stored as ``.npz`` archives (data / labels / starts / subject).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .postures import coerce_label

LABEL_DTYPE = "<U2"


@dataclass
class RecordStream:
    """Columnar stream of labeled sensor records."""

    t: np.ndarray       # (n,) seconds, strictly increasing
    values: np.ndarray  # (n, channels) float64
    labels: np.ndarray  # (n,) two-letter codes

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=LABEL_DTYPE)
        if self.t.ndim != 1 or self.values.ndim != 2 or self.values.shape[0] != self.t.size:
            raise ValueError("stream arrays must be (n,), (n, channels), (n,)")
        if self.labels.shape != self.t.shape:
            raise ValueError("one label per record required")
        if self.t.size > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])


@dataclass
class RawWindow:
    """One un-normalized segmentation window."""

    data: np.ndarray    # (steps, channels)
    labels: np.ndarray  # (steps,) record labels
    start: float        # seconds


@dataclass
class MotionImage:
    """One normalized window with its majority label."""

    data: np.ndarray  # (steps, channels), per-channel zero mean / unit variance
    label: str
    start: float


@dataclass
class LabeledDataset:
    """Ordered collection of motion images for one subject (or a merge)."""

    data: np.ndarray    # (n, steps, channels) float64
    labels: np.ndarray  # (n,) codes
    starts: np.ndarray  # (n,) seconds
    subject: str = ""

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=LABEL_DTYPE)
        self.starts = np.asarray(self.starts, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("dataset data must be (n, steps, channels)")
        if not (len(self.labels) == len(self.starts) == self.data.shape[0]):
            raise ValueError("labels/starts must match image count")

    def __len__(self) -> int:
        return int(self.data.shape[0])

    @property
    def class_histogram(self) -> dict[str, int]:
        uniq, counts = np.unique(self.labels, return_counts=True)
        return {str(u): int(c) for u, c in zip(uniq, counts)}

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.data[idx], self.labels[idx], self.starts[idx], self.subject)

    def images(self) -> list[MotionImage]:
        return [MotionImage(self.data[i], str(self.labels[i]), float(self.starts[i]))
                for i in range(len(self))]


@dataclass
class SplitSpec:
    """Stratified random shuffle split settings."""

    train_test_ratio: float = 0.9   # train side of the train:test split
    train_val_ratio: float = 0.8    # training side of the training:validation split
    rounds: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_test_ratio", "train_val_ratio"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


# ---------------------------------------------------------------------------
# Stream CSV / manifest IO
# ---------------------------------------------------------------------------

def write_stream_csv(stream: RecordStream, path: str | Path) -> None:
    path = Path(path)
    cols = ",".join(f"ch{i:02d}" for i in range(stream.channels))
    with path.open("w", newline="\n") as fh:
        fh.write(f"t,{cols},label\n")
        for i in range(len(stream)):
            vals = ",".join(f"{v:.6f}" for v in stream.values[i])
            fh.write(f"{stream.t[i]:.6f},{vals},{stream.labels[i]}\n")


def read_stream_csv(path: str | Path) -> RecordStream:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[0] != "t" or header[-1] != "label":
            raise ValueError(f"{path}: expected header t,ch..,label")
        channels = len(header) - 2
        t, values, labels = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != channels + 2:
                raise ValueError(f"{path}:{lineno}: expected {channels + 2} fields, got {len(parts)}")
            try:
                t.append(float(parts[0]))
                values.append([float(p) for p in parts[1:-1]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed number ({exc})") from None
            labels.append(coerce_label(parts[-1]))
    return RecordStream(np.array(t), np.array(values), np.array(labels, dtype=LABEL_DTYPE))


def write_manifest(entries: dict[str, object], path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        if line and "=" in line:
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def window_steps(window_s: float, hz: int) -> int:
    """Records per window; window_s * hz must be a positive integer."""
    steps = window_s * hz
    rounded = round(steps)
    if rounded <= 0 or abs(steps - rounded) > 1e-9:
        raise ValueError(f"window_s*hz must be a positive integer, got {steps}")
    return int(rounded)


def segment(stream: RecordStream, window_s: float, hz: int, overlap: float = 0.0) -> list[RawWindow]:
    """Cut the stream into equal windows; trailing partial window discarded."""
    steps = window_steps(window_s, hz)
    if overlap not in (0.0, 0.5):
        raise ValueError(f"overlap must be 0 or 0.5, got {overlap}")
    step = int(steps * (1.0 - overlap))
    if step != steps * (1.0 - overlap):
        raise ValueError("window length must be even for 50% overlap")
    windows = []
    for start in range(0, len(stream) - steps + 1, step):
        windows.append(RawWindow(
            data=stream.values[start:start + steps],
            labels=stream.labels[start:start + steps],
            start=float(stream.t[start]),
        ))
    return windows


def downsample(stream: RecordStream, source_hz: int, target_hz: int, seed: int) -> RecordStream:
    """Keep target_hz randomly chosen records per 1 s block, order preserved.

    The trailing block shorter than one second is dropped; target == source
    is an exact identity.
    """
    if target_hz > source_hz:
        raise ValueError(f"target_hz {target_hz} exceeds source_hz {source_hz}")
    if target_hz == source_hz:
        return stream
    rng = np.random.default_rng([seed, source_hz, target_hz])
    keep: list[np.ndarray] = []
    for start in range(0, len(stream) - source_hz + 1, source_hz):
        chosen = rng.choice(source_hz, size=target_hz, replace=False)
        chosen.sort()
        keep.append(start + chosen)
    if not keep:
        return RecordStream(np.empty(0), np.empty((0, stream.channels)), np.empty(0, dtype=LABEL_DTYPE))
    idx = np.concatenate(keep)
    return RecordStream(stream.t[idx], stream.values[idx], stream.labels[idx])


def normalize(window: np.ndarray) -> np.ndarray:
    """Channel-wise center to mean and scale to unit (population) variance.

    Constant channels (zero variance) map to all zeros.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] < 2:
        raise ValueError("window must be (steps >= 2, channels)")
    mean = window.mean(axis=0)
    std = window.std(axis=0)  # population std (ddof=0)
    out = window - mean
    nonconst = std > 0.0
    out[:, nonconst] /= std[nonconst]
    out[:, ~nonconst] = 0.0
    return out


def label_window(labels: np.ndarray) -> str:
    """Majority record label; ties go to the tied label occurring last."""
    labels = np.asarray(labels, dtype=LABEL_DTYPE)
    if labels.size == 0:
        raise ValueError("cannot label an empty window")
    for code in labels:
        coerce_label(str(code))
    uniq, counts = np.unique(labels, return_counts=True)
    top = uniq[counts == counts.max()]
    if len(top) == 1:
        return str(top[0])
    last_pos = {str(c): int(np.max(np.nonzero(labels == c)[0])) for c in top}
    return max(last_pos, key=last_pos.get)


def build_dataset(stream: RecordStream, window_s: float, hz: int, overlap: float,
                  subject: str = "") -> LabeledDataset:
    """segment -> normalize -> majority-label, in stream order."""
    windows = segment(stream, window_s, hz, overlap)
    steps = window_steps(window_s, hz)
    data = np.empty((len(windows), steps, stream.channels))
    labels = np.empty(len(windows), dtype=LABEL_DTYPE)
    starts = np.empty(len(windows))
    for i, w in enumerate(windows):
        data[i] = normalize(w.data)
        labels[i] = label_window(w.labels)
        starts[i] = w.start
    return LabeledDataset(data, labels, starts, subject)


def _rounded(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_shuffle_split(ds: LabeledDataset, spec: SplitSpec,
                             ) -> list[tuple[LabeledDataset, LabeledDataset, LabeledDataset]]:
    """Per round: class-stratified test split, then one training:validation split.

    Returns ``rounds`` triples (training, validation, test) that partition the
    dataset; shuffling is driven by (seed, round).
    """
    if len(ds) == 0:
        raise ValueError("cannot split an empty dataset")
    test_frac = 1.0 - spec.train_test_ratio
    val_frac = 1.0 - spec.train_val_ratio
    min_frac = min(test_frac, (1.0 - test_frac) * val_frac, (1.0 - test_frac) * (1.0 - val_frac))
    needed = int(np.ceil(1.0 / min_frac))
    hist = ds.class_histogram
    for label, count in sorted(hist.items()):
        if count < needed:
            raise ValueError(f"class {label} has {count} samples; needs >= {needed} to split")
    rounds = []
    for r in range(spec.rounds):
        rng = np.random.default_rng([spec.seed, r])
        train_idx, val_idx, test_idx = [], [], []
        for label in sorted(hist):
            idx = np.nonzero(ds.labels == label)[0]
            shuffled = rng.permutation(idx)
            n_test = _rounded(test_frac * idx.size)
            n_val = _rounded(val_frac * (idx.size - n_test))
            test_idx.append(shuffled[:n_test])
            val_idx.append(shuffled[n_test:n_test + n_val])
            train_idx.append(shuffled[n_test + n_val:])
        triple = tuple(
            ds.subset(np.sort(np.concatenate(part)))
            for part in (train_idx, val_idx, test_idx)
        )
        rounds.append(triple)
    return rounds


def merge_generalized(datasets: list[LabeledDataset], drop_labels: set[str] | frozenset[str] = frozenset(),
                      subject: str = "generalized") -> LabeledDataset:
    """Concatenate datasets, removing the listed labels."""
    if not datasets:
        raise ValueError("nothing to merge")
    shapes = {d.data.shape[1:] for d in datasets}
    if len(shapes) > 1:
        raise ValueError(f"channel layout mismatch across datasets: {sorted(shapes)}")
    drop = {coerce_label(l) for l in drop_labels}
    parts = []
    for d in datasets:
        keep = ~np.isin(d.labels, sorted(drop)) if drop else np.ones(len(d), dtype=bool)
        parts.append((d.data[keep], d.labels[keep], d.starts[keep]))
    return LabeledDataset(
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        subject,
    )


# ---------------------------------------------------------------------------
# Dataset archive IO
# ---------------------------------------------------------------------------

def save_dataset(ds: LabeledDataset, path: str | Path) -> None:
    np.savez(Path(path), data=ds.data, labels=ds.labels, starts=ds.starts,
             subject=np.array(ds.subject))


def load_dataset(path: str | Path) -> LabeledDataset:
    with np.load(Path(path)) as z:
        return LabeledDataset(z["data"], z["labels"], z["starts"], str(z["subject"]))
