"""Supervised training: Adam updates, best-validation checkpointing, model IO.

Checkpoint format: one magic line, ``key=value`` header lines (architecture,
class list, seed, epoch, validation Macro F1, tensor count), then the named
tensors in declaration order, each introduced by ``@name shape`` and stored
as little-endian IEEE-754 32-bit values.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import ConfusionMatrix, macro_f1
from .nn.model import (
    Architecture,
    ClnModel,
    batch_cross_entropy,
    init_model,
    model_backward,
    model_forward,
    param_shapes,
)
from .pipeline import LabeledDataset

LR_LEVELS = {"LR1": 1e-2, "LR2": 1e-3, "LR3": 1e-4}

_MAGIC = "imupose-checkpoint v1"
_EVAL_BATCH = 512


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite."""


class CheckpointFormatError(ValueError):
    """Raised on malformed, truncated or mismatching checkpoint files."""


@dataclass
class TrainConfig:
    """Optimizer and loop settings; defaults follow the full-scale setup."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 300
    epochs: int = 300
    seed: int = 0
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def with_lr_level(cls, level: str, **kwargs) -> "TrainConfig":
        if level not in LR_LEVELS:
            raise ValueError(f"unknown LR level {level!r}; choose from {sorted(LR_LEVELS)}")
        return cls(lr=LR_LEVELS[level], **kwargs)


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_macro_f1: float
    saved: bool
    seconds: float


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update, in place. Rejects non-finite gradients by name."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


def evaluate(model: ClnModel, ds: LabeledDataset, kernels=None) -> tuple[ConfusionMatrix, float]:
    """Infer-mode predictions over the dataset; returns (confusion, Macro F1)."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    model.class_index(ds.labels)  # rejects labels outside the model head
    preds = []
    for lo in range(0, len(ds), _EVAL_BATCH):
        probs, _ = model_forward(model, ds.data[lo:lo + _EVAL_BATCH], train=False,
                                 kernels=kernels)
        preds.append(probs.argmax(axis=-1))
    pred_labels = np.array([model.classes[i] for i in np.concatenate(preds)])
    cm = ConfusionMatrix.from_predictions(ds.labels, pred_labels, model.classes)
    return cm, macro_f1(cm)


def train(ds_train: LabeledDataset, ds_val: LabeledDataset, cfg: TrainConfig,
          start_model: ClnModel | None = None, checkpoint_path: str | Path | None = None,
          log_path: str | Path | None = None, kernels=None,
          ) -> tuple[ClnModel, list[EpochStats]]:
    """Mini-batch training with per-epoch reshuffle and best-F1 checkpointing.

    The checkpoint is overwritten only on strict validation improvement; the
    returned model is the best one. ``start_model`` continues training from
    existing weights (fresh optimizer state).
    """
    if len(ds_train) == 0 or len(ds_val) == 0:
        raise ValueError("training and validation datasets must be non-empty")
    if start_model is None:
        classes = tuple(sorted(set(map(str, ds_train.labels)) | set(map(str, ds_val.labels))))
        model = init_model(cfg.arch, classes, seed=cfg.seed)
    else:
        model = start_model.copy()
    label_idx = model.class_index(ds_train.labels)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    state = AdamState.for_params(model.params)
    best_f1 = -np.inf
    best_model = model.copy()
    history: list[EpochStats] = []
    n = len(ds_train)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]  # final short batch kept
            probs, cache = model_forward(model, ds_train.data[batch], train=True,
                                         rng=dropout_rng, kernels=kernels)
            loss = batch_cross_entropy(probs, label_idx[batch])
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting {lo} "
                    f"(lr={cfg.lr}, batch_size={cfg.batch_size})")
            grads = model_backward(model, cache, label_idx[batch], kernels=kernels)
            adam_step(model.params, grads, state, cfg)
            loss_sum += loss * len(batch)
        _, val_f1 = evaluate(model, ds_val, kernels=kernels)
        saved = val_f1 > best_f1
        if saved:
            best_f1 = val_f1
            best_model = model.copy()
            if checkpoint_path is not None:
                save_model(best_model, checkpoint_path, seed=cfg.seed, epoch=epoch,
                           val_macro_f1=val_f1, train_config=cfg)
        history.append(EpochStats(epoch, loss_sum / n, val_f1, saved,
                                  time.perf_counter() - t0))
    if log_path is not None:
        write_training_log(history, log_path)
    return best_model, history


def write_training_log(history: list[EpochStats], path: str | Path) -> None:
    with Path(path).open("w", newline="\n") as fh:
        fh.write("epoch,loss,val_macro_f1,saved\n")
        for row in history:
            fh.write(f"{row.epoch},{row.loss:.6f},{row.val_macro_f1:.6f},{int(row.saved)}\n")


# ---------------------------------------------------------------------------
# Checkpoint IO
# ---------------------------------------------------------------------------

def save_model(model: ClnModel, path: str | Path, seed: int | None = None,
               epoch: int | None = None, val_macro_f1: float | None = None,
               train_config: "TrainConfig | None" = None) -> None:
    arch = model.arch
    header = [
        _MAGIC,
        f"descriptor={arch.descriptor}",
        f"conv_layers={arch.conv_layers}",
        f"kernels={arch.kernels}",
        f"kernel_h={arch.kernel_h}",
        f"kernel_w={arch.kernel_w}",
        f"lstm_layers={arch.lstm_layers}",
        f"lstm_units={arch.lstm_units}",
        f"dropout={arch.dropout!r}",
        f"padding={arch.padding}",
        f"window_steps={arch.window_steps}",
        f"channels={arch.channels}",
        "classes=" + ",".join(model.classes),
        f"seed={'' if seed is None else seed}",
        f"epoch={'' if epoch is None else epoch}",
        f"val_macro_f1={'' if val_macro_f1 is None else repr(float(val_macro_f1))}",
    ]
    if train_config is not None:
        header += [
            f"lr={train_config.lr!r}",
            f"batch_size={train_config.batch_size}",
            f"epochs_budget={train_config.epochs}",
        ]
    header.append(f"tensors={len(model.params)}")
    with Path(path).open("wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        for name, p in model.params.items():
            shape = "x".join(str(s) for s in p.shape)
            fh.write(f"@{name} {shape}\n".encode())
            fh.write(p.astype("<f4").tobytes())
            fh.write(b"\n")


def _read_line(fh) -> str:
    raw = fh.readline()
    if not raw.endswith(b"\n"):
        raise CheckpointFormatError("truncated checkpoint header")
    return raw[:-1].decode()


def load_model(path: str | Path) -> ClnModel:
    """Rebuild a model from a checkpoint; fails cleanly on damage, never partial."""
    path = Path(path)
    with path.open("rb") as fh:
        if _read_line(fh) != _MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
        meta: dict[str, str] = {}
        while "tensors" not in meta:
            line = _read_line(fh)
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointFormatError(f"{path}: malformed header line {line!r}")
            meta[key] = value
        try:
            arch = Architecture(
                conv_layers=int(meta["conv_layers"]),
                kernels=int(meta["kernels"]),
                kernel_h=int(meta["kernel_h"]),
                kernel_w=int(meta["kernel_w"]),
                lstm_layers=int(meta["lstm_layers"]),
                lstm_units=int(meta["lstm_units"]),
                dropout=float(meta["dropout"]),
                padding=meta["padding"],
                window_steps=int(meta["window_steps"]),
                channels=int(meta["channels"]),
            )
            classes = tuple(meta["classes"].split(","))
            n_tensors = int(meta["tensors"])
        except (KeyError, ValueError) as exc:
            raise CheckpointFormatError(f"{path}: bad header ({exc})") from None
        expected = param_shapes(arch, len(classes))
        if n_tensors != len(expected):
            raise CheckpointFormatError(
                f"{path}: header declares {n_tensors} tensors, architecture needs {len(expected)}")
        params: dict[str, np.ndarray] = {}
        for name, shape in expected:
            intro = _read_line(fh)
            if not intro.startswith("@"):
                raise CheckpointFormatError(f"{path}: expected tensor line, got {intro!r}")
            got_name, _, got_shape = intro[1:].partition(" ")
            if got_name != name:
                raise CheckpointFormatError(f"{path}: expected tensor {name}, found {got_name}")
            if tuple(int(s) for s in got_shape.split("x")) != shape:
                raise CheckpointFormatError(f"{path}: {name} has shape {got_shape}, want {shape}")
            nbytes = int(np.prod(shape)) * 4
            buf = fh.read(nbytes)
            if len(buf) != nbytes or fh.read(1) != b"\n":
                raise CheckpointFormatError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(shape)
    return ClnModel(arch, classes, params)


def checkpoint_meta(path: str | Path) -> dict[str, str]:
    """Header key=value pairs of a checkpoint, without loading tensors."""
    with Path(path).open("rb") as fh:
        if _read_line(fh) != _MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
        meta: dict[str, str] = {}
        while "tensors" not in meta:
            line = _read_line(fh)
            key, _, value = line.partition("=")
            meta[key] = value
    return meta
