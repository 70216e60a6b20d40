"""Deterministic generator of labeled multichannel posture streams.

Each posture class is a per-channel sinusoid family (offset + amplitude *
sin(2*pi*f*t + phase) + Gaussian noise); class identity can be confined to
chosen channels so that channel-importance experiments have a known answer.
Subject drift perturbs offsets and phases, modeling a new worker performing
the same postures differently.

PRNG: numpy PCG64 seeded through SeedSequence, with independent sub-streams
for dwell sampling, signal noise and drift. Recorded in every manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import pipeline
from .postures import N_CHANNELS, coerce_label

GENERATOR_NAME = "numpy-pcg64"
VALID_RATES = (20, 40, 50)

# sub-stream ids appended to the user seed
_SUB_DWELL = 0
_SUB_NOISE = 1
_SUB_DRIFT = 2


@dataclass
class ClassSignature:
    """Per-channel signal parameters for one posture class."""

    label: str
    offsets: np.ndarray    # (channels,) base offset
    freqs_hz: np.ndarray   # (channels,) oscillation frequency
    amps: np.ndarray       # (channels,) oscillation amplitude
    phases: np.ndarray     # (channels,) radians
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        self.label = coerce_label(self.label)
        for name in ("offsets", "freqs_hz", "amps", "phases"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.offsets.size
        if not all(getattr(self, a).size == n for a in ("freqs_hz", "amps", "phases")):
            raise ValueError("signature arrays must share one length")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def channels(self) -> int:
        return int(self.offsets.size)


@dataclass
class SubjectProfile:
    """A subject's signatures plus posture mix and dwell behavior."""

    subject_id: str
    signatures: list[ClassSignature]
    mix: dict[str, float]          # label -> proportion, sums to 1
    dwell_s: float                 # mean seconds per continuous posture
    drift: float = 0.1             # offset/phase perturbation magnitude

    def __post_init__(self) -> None:
        if not self.signatures:
            raise ValueError("profile needs at least one class signature")
        if abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"posture mix must sum to 1, got {sum(self.mix.values())}")
        if self.dwell_s <= 0:
            raise ValueError("dwell_s must be > 0")
        known = {s.label for s in self.signatures}
        for label in self.mix:
            if coerce_label(label) not in known:
                raise ValueError(f"mix label {label} has no signature")

    @property
    def channels(self) -> int:
        return self.signatures[0].channels

    def signature(self, label: str) -> ClassSignature:
        for sig in self.signatures:
            if sig.label == label:
                return sig
        raise KeyError(label)


def generate_stream(profile: SubjectProfile, duration_s: float, hz: int = 40,
                    channels: int = N_CHANNELS, seed: int = 0) -> pipeline.RecordStream:
    """Generate duration_s*hz labeled records. Bit-identical for equal inputs."""
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    if hz not in VALID_RATES:
        raise ValueError(f"hz must be one of {VALID_RATES}, got {hz}")
    if channels != profile.channels:
        raise ValueError(f"profile defines {profile.channels} channels, requested {channels}")
    for sig in profile.signatures:
        if np.any(sig.freqs_hz >= hz / 2):
            raise ValueError(f"signature {sig.label} oscillates at/above Nyquist ({hz / 2} Hz)")

    n = int(round(duration_s * hz))
    t = np.arange(n, dtype=np.float64) / hz
    labels = _dwell_labels(profile, n, hz, seed)
    rng_noise = np.random.default_rng([seed, _SUB_NOISE])
    values = np.empty((n, channels))
    for sig in profile.signatures:
        rows = labels == sig.label
        if not rows.any():
            continue
        phase = 2.0 * np.pi * np.outer(t[rows], sig.freqs_hz) + sig.phases
        values[rows] = sig.offsets + sig.amps * np.sin(phase)
    noise_std = {sig.label: sig.noise_std for sig in profile.signatures}
    if any(v > 0 for v in noise_std.values()):
        noise = rng_noise.standard_normal((n, channels))
        scale = np.array([noise_std[str(l)] for l in labels])
        values += noise * scale[:, None]
    return pipeline.RecordStream(t, values, labels)


def _dwell_labels(profile: SubjectProfile, n: int, hz: int, seed: int) -> np.ndarray:
    """Label sequence of contiguous segments with ~exponential dwell."""
    rng = np.random.default_rng([seed, _SUB_DWELL])
    mix_labels = sorted(profile.mix)
    probs = np.array([profile.mix[l] for l in mix_labels])
    probs = probs / probs.sum()
    out = np.empty(n, dtype=pipeline.LABEL_DTYPE)
    pos = 0
    while pos < n:
        length = max(1, int(round(rng.exponential(profile.dwell_s) * hz)))
        label = rng.choice(mix_labels, p=probs)
        out[pos:pos + length] = label
        pos += length
    return out


def derive_subject(base: SubjectProfile, drift_scale: float, seed: int,
                   subject_id: str | None = None, freq_jitter_hz: float = 2.0,
                   min_freq_hz: float = 0.2) -> SubjectProfile:
    """New profile with offsets, phases and frequencies perturbed
    proportionally to drift_scale.

    Offsets and phases alone cannot shift what a per-window-normalized
    classifier sees (channel z-scoring erases offsets and windows start at
    arbitrary phases), so subject drift also jitters the oscillation
    frequencies; with drift_scale 0 the profile is unchanged.
    """
    if drift_scale < 0:
        raise ValueError("drift_scale must be >= 0")
    rng = np.random.default_rng([seed, _SUB_DRIFT])
    signatures = []
    for sig in base.signatures:
        d_off = rng.standard_normal(sig.channels) * base.drift * drift_scale
        d_phase = rng.standard_normal(sig.channels) * base.drift * drift_scale * np.pi
        d_freq = rng.standard_normal(sig.channels) * base.drift * drift_scale * freq_jitter_hz
        signatures.append(replace(
            sig,
            offsets=sig.offsets + d_off,
            phases=sig.phases + d_phase,
            freqs_hz=np.maximum(sig.freqs_hz + d_freq, min_freq_hz),
        ))
    name = subject_id if subject_id is not None else f"{base.subject_id}-d{seed}"
    return SubjectProfile(name, signatures, dict(base.mix), base.dwell_s, base.drift)


def make_profile(subject_id: str, labels: list[str], channels: int = N_CHANNELS,
                 informative: tuple[int, ...] | None = None, separation: float = 1.5,
                 freq_base_hz: float = 1.0, freq_step_hz: float = 2.0,
                 noise_std: float = 0.05, dwell_s: float = 4.0,
                 mix: dict[str, float] | None = None, seed: int = 0) -> SubjectProfile:
    """Build a profile whose class identity lives on the given channels.

    Classes are separated on the informative channels by both a distinct
    offset (survives in raw windows, where the nearest-neighbor oracles
    operate) and a distinct oscillation frequency (survives per-window
    channel normalization, which is what the classifier sees). With
    ``informative=None`` every channel separates the classes; otherwise the
    remaining channels share one signature family across classes, so
    permuting them destroys no class information.

    Keep freq_base + freq_step*(len(labels)-1) below the Nyquist rate of the
    sampling frequency the profile will be generated at.
    """
    labels = [coerce_label(l) for l in labels]
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate labels")
    rng = np.random.default_rng([seed, len(labels), channels])
    shared_offsets = rng.normal(0.0, 0.3, channels)
    shared_freqs = rng.uniform(0.4, 2.0, channels)
    shared_amps = rng.uniform(0.8, 1.2, channels)
    shared_phases = rng.uniform(0.0, 2.0 * np.pi, channels)
    info = np.arange(channels) if informative is None else np.asarray(informative, dtype=np.intp)
    signatures = []
    for k, label in enumerate(labels):
        offsets = shared_offsets.copy()
        freqs = shared_freqs.copy()
        offsets[info] = separation * (k - (len(labels) - 1) / 2.0) \
            + rng.normal(0.0, 0.05, info.size)
        freqs[info] = freq_base_hz + freq_step_hz * k
        signatures.append(ClassSignature(
            label=label,
            offsets=offsets,
            freqs_hz=freqs,
            amps=shared_amps.copy(),
            phases=shared_phases.copy(),
            noise_std=noise_std,
        ))
    if mix is None:
        mix = {l: 1.0 / len(labels) for l in labels}
        # exact sum-to-1 regardless of float division
        mix[labels[-1]] = 1.0 - sum(mix[l] for l in labels[:-1])
    return SubjectProfile(subject_id, signatures, mix, dwell_s)


def write_stream(profile: SubjectProfile, out_dir: str | Path, duration_s: float,
                 hz: int = 40, channels: int = N_CHANNELS, seed: int = 0) -> tuple[Path, Path]:
    """Generate and write one subject stream CSV plus its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = generate_stream(profile, duration_s, hz, channels, seed)
    csv_path = out_dir / f"{profile.subject_id}.csv"
    manifest_path = out_dir / f"{profile.subject_id}.manifest"
    pipeline.write_stream_csv(stream, csv_path)
    pipeline.write_manifest({
        "subject": profile.subject_id,
        "source": "imupose.synth",
        "generator": GENERATOR_NAME,
        "seed": seed,
        "hz": hz,
        "channels": channels,
        "duration_s": duration_s,
        "dwell_s": profile.dwell_s,
        "drift": profile.drift,
        "mix": ";".join(f"{l}:{profile.mix[l]:.6f}" for l in sorted(profile.mix)),
        "noise_std": ";".join(f"{s.label}:{s.noise_std:.6f}" for s in profile.signatures),
    }, manifest_path)
    return csv_path, manifest_path
