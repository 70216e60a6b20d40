"""The conv-LSTM posture classifier: parameters, forward and backward passes.

Architecture: [conv -> tanh] x N -> depth flatten -> LSTM x 2 -> dropout on
the final step's hidden vector (train mode only, inverted scaling) -> dense
-> softmax. Descriptor strings follow the C{N}L{lstm_layers} convention,
e.g. "C1L2".

Parameters live in an insertion-ordered dict of float64 arrays:
    conv{i}.kernels (K,kh,kw,Cin), conv{i}.bias (K,)
    lstm{l}.w_x (in,4H), lstm{l}.w_h (H,4H), lstm{l}.b (4H,)
    dense.w (H,C), dense.b (C,)
LSTM gate columns are stacked [forget | input | candidate | output]; the
per-gate matrices (w_xf, w_hf, ..., b_o) are exposed as views.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backend import get_kernels

PROB_FLOOR = 1e-12
GATE_NAMES = ("f", "i", "c", "o")  # column block order in stacked LSTM params


@dataclass
class Architecture:
    """Model hyperparameters; validated on construction."""

    conv_layers: int = 1
    kernels: int = 64
    kernel_h: int = 5
    kernel_w: int = 30
    lstm_layers: int = 2
    lstm_units: int = 128
    dropout: float = 0.5
    padding: str = "same"
    window_steps: int = 40
    channels: int = 30

    def __post_init__(self) -> None:
        if not 1 <= self.conv_layers <= 5:
            raise ValueError(f"conv_layers must be in [1, 5], got {self.conv_layers}")
        if self.lstm_layers != 2:
            raise ValueError("architecture is fixed at two LSTM layers")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        for name in ("kernels", "kernel_h", "kernel_w", "lstm_units", "window_steps", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        s_out, d_out = self.conv_output_shape()
        if s_out < 1 or d_out < 1:
            raise ValueError("valid padding eats the whole window; shrink kernels or depth")

    @property
    def descriptor(self) -> str:
        return f"C{self.conv_layers}L{self.lstm_layers}"

    def conv_output_shape(self) -> tuple[int, int]:
        s, d = self.window_steps, self.channels
        if self.padding == "valid":
            s -= self.conv_layers * (self.kernel_h - 1)
            d -= self.conv_layers * (self.kernel_w - 1)
        return s, d

    @property
    def flat_features(self) -> int:
        return self.conv_output_shape()[1] * self.kernels

    def pads(self) -> tuple[int, int, int, int]:
        """Per-layer zero padding (top, bottom, left, right).

        Same padding preserves (steps, channels); even kernel sizes take the
        extra zero on the trailing side.
        """
        if self.padding == "valid":
            return (0, 0, 0, 0)
        return ((self.kernel_h - 1) // 2, self.kernel_h // 2,
                (self.kernel_w - 1) // 2, self.kernel_w // 2)


class LstmLayerParams:
    """Named per-gate views over the stacked LSTM weight arrays."""

    def __init__(self, w_x: np.ndarray, w_h: np.ndarray, b: np.ndarray):
        self.w_x = w_x
        self.w_h = w_h
        self.b = b
        self.hidden = w_h.shape[0]

    def _block(self, a: np.ndarray, gate: str) -> np.ndarray:
        k = GATE_NAMES.index(gate)
        return a[..., k * self.hidden:(k + 1) * self.hidden]

    @property
    def w_xf(self): return self._block(self.w_x, "f")
    @property
    def w_xi(self): return self._block(self.w_x, "i")
    @property
    def w_xc(self): return self._block(self.w_x, "c")
    @property
    def w_xo(self): return self._block(self.w_x, "o")
    @property
    def w_hf(self): return self._block(self.w_h, "f")
    @property
    def w_hi(self): return self._block(self.w_h, "i")
    @property
    def w_hc(self): return self._block(self.w_h, "c")
    @property
    def w_ho(self): return self._block(self.w_h, "o")
    @property
    def b_f(self): return self._block(self.b, "f")
    @property
    def b_i(self): return self._block(self.b, "i")
    @property
    def b_c(self): return self._block(self.b, "c")
    @property
    def b_o(self): return self._block(self.b, "o")


@dataclass
class LstmState:
    """Cell (long-term) and hidden (short-term) state vectors."""

    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "LstmState":
        return cls(np.zeros(hidden), np.zeros(hidden))


@dataclass
class ClnModel:
    """Architecture descriptor, class list and the ordered parameter tree."""

    arch: Architecture
    classes: tuple[str, ...]
    params: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("model needs at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate classes")
        expected = [name for name, _ in param_shapes(self.arch, len(self.classes))]
        if list(self.params) != expected:
            raise ValueError(f"parameter tree mismatch; expected {expected}")
        for name, shape in param_shapes(self.arch, len(self.classes)):
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def lstm_params(self, layer: int) -> LstmLayerParams:
        return LstmLayerParams(self.params[f"lstm{layer}.w_x"],
                               self.params[f"lstm{layer}.w_h"],
                               self.params[f"lstm{layer}.b"])

    def copy(self) -> "ClnModel":
        return ClnModel(replace(self.arch), tuple(self.classes),
                        {k: v.copy() for k, v in self.params.items()})

    def class_index(self, labels: np.ndarray | list[str]) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lookup[str(l)] for l in np.atleast_1d(labels)], dtype=np.intp)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not in model head {self.classes}") from None


def param_shapes(arch: Architecture, n_classes: int) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter declaration order and shapes (also the checkpoint order)."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for i in range(arch.conv_layers):
        cin = 1 if i == 0 else arch.kernels
        shapes.append((f"conv{i}.kernels", (arch.kernels, arch.kernel_h, arch.kernel_w, cin)))
        shapes.append((f"conv{i}.bias", (arch.kernels,)))
    h = arch.lstm_units
    for layer in range(arch.lstm_layers):
        n_in = arch.flat_features if layer == 0 else h
        shapes.append((f"lstm{layer}.w_x", (n_in, 4 * h)))
        shapes.append((f"lstm{layer}.w_h", (h, 4 * h)))
        shapes.append((f"lstm{layer}.b", (4 * h,)))
    shapes.append(("dense.w", (h, n_classes)))
    shapes.append(("dense.b", (n_classes,)))
    return shapes


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_model(arch: Architecture, classes: tuple[str, ...] | list[str], seed: int = 0) -> ClnModel:
    """Glorot-uniform weights, zero biases; draw order fixed by declaration order."""
    rng = np.random.default_rng([seed, 101])
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(arch, len(classes)):
        if name.endswith(".bias") or name.endswith(".b"):
            params[name] = np.zeros(shape)
        elif name.endswith(".kernels"):
            k, kh, kw, cin = shape
            params[name] = _glorot(rng, shape, kh * kw * cin, kh * kw * k)
        else:  # 2-d weight matrices
            params[name] = _glorot(rng, shape, shape[0], shape[1])
    return ClnModel(arch, tuple(str(c) for c in classes), params)


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def tanh_activation(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def flatten_depth(x: np.ndarray) -> np.ndarray:
    """(B,S,D,K) feature maps -> (B,S,D*K) step vectors, width-major order.

    Feature (d, k) lands at index d*K + k; ``unflatten_depth`` is its inverse.
    """
    if x.ndim != 4:
        raise ValueError("expected (batch, steps, width, depth)")
    b, s, d, k = x.shape
    return x.reshape(b, s, d * k)


def unflatten_depth(x: np.ndarray, depth: int) -> np.ndarray:
    b, s, dk = x.shape
    return x.reshape(b, s, dk // depth, depth)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """Negative log-likelihood of the true class, probability floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label index {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def batch_cross_entropy(probs: np.ndarray, label_idx: np.ndarray) -> float:
    """Mean negative log-likelihood over a batch."""
    picked = probs[np.arange(len(label_idx)), label_idx]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def lstm_step(x_t: np.ndarray, prev: LstmState, p: LstmLayerParams) -> tuple[LstmState, dict[str, np.ndarray]]:
    """One LSTM cell update; the reference the sequence kernels are tested against.

    Gates f/i/o use the logistic function; the candidate and the cell output
    squash use tanh.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != p.w_x.shape[0]:
        raise ValueError(f"input size {x_t.shape[-1]} != w_x rows {p.w_x.shape[0]}")
    def sig(a):
        return 1.0 / (1.0 + np.exp(-a))
    f = sig(x_t @ p.w_xf + prev.h @ p.w_hf + p.b_f)
    i = sig(x_t @ p.w_xi + prev.h @ p.w_hi + p.b_i)
    cand = np.tanh(x_t @ p.w_xc + prev.h @ p.w_hc + p.b_c)
    o = sig(x_t @ p.w_xo + prev.h @ p.w_ho + p.b_o)
    c = f * prev.c + i * cand
    h = o * np.tanh(c)
    return LstmState(c, h), {"f": f, "i": i, "c_tilde": cand, "o": o}


# ---------------------------------------------------------------------------
# Full model forward / backward
# ---------------------------------------------------------------------------

def model_forward(model: ClnModel, x: np.ndarray, train: bool = False,
                  rng: np.random.Generator | int | None = None,
                  kernels=None) -> tuple[np.ndarray, dict | None]:
    """Class probabilities for a batch of windows.

    ``x``: (steps, channels) or (batch, steps, channels). In train mode the
    dropout mask needs ``rng`` (Generator or seed) and the returned cache
    holds every activation the backward pass needs.
    """
    kern = kernels or get_kernels()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    arch = model.arch
    if x.ndim != 3 or x.shape[1] != arch.window_steps or x.shape[2] != arch.channels:
        raise ValueError(
            f"input must be (batch, {arch.window_steps}, {arch.channels}), got {x.shape}")
    cur = np.ascontiguousarray(x[..., None])
    pads = arch.pads()
    conv_cache = []
    for i in range(arch.conv_layers):
        k = model.params[f"conv{i}.kernels"]
        b = model.params[f"conv{i}.bias"]
        act = np.tanh(kern.conv2d_forward(cur, k, b, pads))
        conv_cache.append((cur, act))
        cur = act
    flat = flatten_depth(cur)
    lstm_cache = []
    seq = flat
    n = seq.shape[0]
    h0 = np.zeros((n, arch.lstm_units))
    c0 = np.zeros((n, arch.lstm_units))
    for layer in range(arch.lstm_layers):
        w_x = model.params[f"lstm{layer}.w_x"]
        w_h = model.params[f"lstm{layer}.w_h"]
        b = model.params[f"lstm{layer}.b"]
        pre = seq.reshape(-1, seq.shape[-1]) @ w_x + b
        pre = np.ascontiguousarray(pre.reshape(n, seq.shape[1], -1))
        h_seq, c_seq, tanh_c, gates = kern.lstm_forward_core(pre, w_h, h0, c0)
        lstm_cache.append((seq, gates, c_seq, tanh_c, h_seq))
        seq = h_seq
    last = seq[:, -1, :]
    if train and arch.dropout > 0.0:
        if rng is None:
            raise ValueError("train-mode forward with dropout needs an rng or seed")
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        keep = 1.0 - arch.dropout
        mask = (gen.random(last.shape) < keep) / keep
        dropped = last * mask
    else:
        mask = None
        dropped = last
    logits = dropped @ model.params["dense.w"] + model.params["dense.b"]
    probs = softmax(logits)
    if not train:
        return probs, None
    if mask is None:
        mask = np.ones_like(last)
    cache = {
        "conv": conv_cache,
        "lstm": lstm_cache,
        "mask": mask,
        "dropped": dropped,
        "probs": probs,
        "h0": h0,
        "c0": c0,
    }
    return probs, cache


def model_backward(model: ClnModel, cache: dict, label_idx: np.ndarray,
                   kernels=None) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy w.r.t. every parameter."""
    if cache is None:
        raise ValueError("backward needs the cache from a train-mode forward")
    kern = kernels or get_kernels()
    arch = model.arch
    probs = cache["probs"]
    n = probs.shape[0]
    label_idx = np.asarray(label_idx, dtype=np.intp)
    if label_idx.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {label_idx.shape}")
    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), label_idx] -= 1.0
    dlogits /= n
    grads["dense.w"] = cache["dropped"].T @ dlogits
    grads["dense.b"] = dlogits.sum(axis=0)
    dlast = (dlogits @ model.params["dense.w"].T) * cache["mask"]
    dseq = None
    for layer in range(arch.lstm_layers - 1, -1, -1):
        seq_in, gates, c_seq, tanh_c, h_seq = cache["lstm"][layer]
        dh_seq = np.zeros_like(h_seq)
        if layer == arch.lstm_layers - 1:
            dh_seq[:, -1, :] = dlast
        else:
            dh_seq += dseq
        w_h = model.params[f"lstm{layer}.w_h"]
        w_x = model.params[f"lstm{layer}.w_x"]
        dgates, dw_h = kern.lstm_backward_core(gates, c_seq, tanh_c, h_seq, w_h,
                                               dh_seq, cache["h0"], cache["c0"])
        flat_in = seq_in.reshape(-1, seq_in.shape[-1])
        flat_dg = dgates.reshape(-1, dgates.shape[-1])
        grads[f"lstm{layer}.w_x"] = flat_in.T @ flat_dg
        grads[f"lstm{layer}.w_h"] = dw_h
        grads[f"lstm{layer}.b"] = flat_dg.sum(axis=0)
        dseq = (flat_dg @ w_x.T).reshape(seq_in.shape)
    dcur = unflatten_depth(dseq, arch.kernels)
    pads = arch.pads()
    for i in range(arch.conv_layers - 1, -1, -1):
        x_in, act = cache["conv"][i]
        dy = np.ascontiguousarray(dcur * (1.0 - act * act))  # through tanh
        k = model.params[f"conv{i}.kernels"]
        dx, dk, db = kern.conv2d_backward(x_in, k, dy, pads)
        grads[f"conv{i}.kernels"] = dk
        grads[f"conv{i}.bias"] = db
        dcur = dx
    return {name: grads[name] for name in model.params}


def model_loss_and_grads(model: ClnModel, x: np.ndarray, label_idx: np.ndarray,
                         rng: np.random.Generator | int | None = None,
                         kernels=None) -> tuple[float, dict[str, np.ndarray]]:
    probs, cache = model_forward(model, x, train=True, rng=rng, kernels=kernels)
    loss = batch_cross_entropy(probs, label_idx)
    return loss, model_backward(model, cache, label_idx, kernels=kernels)


def predict_proba(model: ClnModel, x: np.ndarray, kernels=None) -> np.ndarray:
    probs, _ = model_forward(model, x, train=False, kernels=kernels)
    return probs


def predict(model: ClnModel, x: np.ndarray, kernels=None) -> np.ndarray:
    probs = predict_proba(model, x, kernels=kernels)
    idx = probs.argmax(axis=-1)
    return np.array([model.classes[i] for i in idx], dtype="<U2")


def rebuild_head(model: ClnModel, new_classes: tuple[str, ...], seed: int = 0) -> ClnModel:
    """Softmax head over the union class set; existing class rows copied,
    new rows freshly initialized."""
    union = tuple(model.classes) + tuple(c for c in new_classes if c not in model.classes)
    if union == tuple(model.classes):
        return model.copy()
    rng = np.random.default_rng([seed, 202])
    h = model.arch.lstm_units
    w = _glorot(rng, (h, len(union)), h, len(union))
    b = np.zeros(len(union))
    w[:, :model.n_classes] = model.params["dense.w"]
    b[:model.n_classes] = model.params["dense.b"]
    params = {k: v.copy() for k, v in model.params.items()}
    params["dense.w"] = w
    params["dense.b"] = b
    return ClnModel(replace(model.arch), union, params)
