"""Posture label set, comfort classes and the 30-channel sensor layout.

Channel order is fixed across the whole package: five placements (head,
chest, arm, thigh, calf), each contributing accelerometer x,y,z followed by
gyroscope x,y,z. Channel groups pair a placement with a sensor unit
(e.g. ``chest_acc``) and partition the 30 channels into 10 groups of 3.
"""

from __future__ import annotations

from enum import Enum


class PostureLabel(str, Enum):
    """Closed set of posture codes."""

    BT = "BT"  # static bending
    KN = "KN"  # kneeling
    LB = "LB"  # lateral bend
    MO = "MO"  # climbing ladders
    TR = "TR"  # transitional
    SQ = "SQ"  # squatting
    ST = "ST"  # standing
    WK = "WK"  # walking
    WO = "WO"  # overhead work

    def __str__(self) -> str:  # CSV cells carry the bare two-letter code
        return self.value


ALL_LABELS: tuple[str, ...] = tuple(label.value for label in PostureLabel)

UNCOMFORTABLE: frozenset[str] = frozenset({"BT", "KN", "LB", "SQ", "WO"})
COMFORTABLE: frozenset[str] = frozenset({"WK", "MO", "ST"})
# TR belongs to neither comfort class and gets no OWAS level.
OWAS_ASSESSED: frozenset[str] = frozenset({"BT", "KN", "SQ", "WO", "LB"})

PLACEMENTS: tuple[str, ...] = ("head", "chest", "arm", "thigh", "calf")
SENSOR_UNITS: tuple[str, ...] = ("acc", "gyro")
N_CHANNELS = len(PLACEMENTS) * len(SENSOR_UNITS) * 3


def channel_name(index: int) -> str:
    """Name of a channel index, e.g. 7 -> ``chest_acc_y``."""
    if not 0 <= index < N_CHANNELS:
        raise ValueError(f"channel index out of range: {index}")
    placement = PLACEMENTS[index // 6]
    unit = SENSOR_UNITS[(index % 6) // 3]
    axis = "xyz"[index % 3]
    return f"{placement}_{unit}_{axis}"


def channel_groups() -> dict[str, tuple[int, int, int]]:
    """The 10 placement/unit groups, each owning 3 consecutive channels."""
    groups: dict[str, tuple[int, int, int]] = {}
    for p, placement in enumerate(PLACEMENTS):
        for u, unit in enumerate(SENSOR_UNITS):
            base = p * 6 + u * 3
            groups[f"{placement}_{unit}"] = (base, base + 1, base + 2)
    return groups


def coerce_label(value: str | PostureLabel) -> str:
    """Validate a label code and return it as a plain string."""
    if isinstance(value, PostureLabel):
        return value.value
    if value not in PostureLabel.__members__:
        raise ValueError(f"unknown posture label: {value!r}")
    return value
