"""Per-frame driver-state feature schema.

A :class:`FeatureFrame` bundles the outputs of the upstream gaze, hand and
foot classifiers for one timestamp. Everything downstream (datasets, model
inputs, checkpoints) relies on the canonical flattening order defined here::

    F foot[5] | G gaze[8] | H hand_l[6] hand_r[6] | S stereo[2] | O obj_l[7] obj_r[7]

Changing that order requires bumping :data:`FEATURE_ORDER_VERSION`.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

import numpy as np

from .errors import ConfigError, ValidationError

FEATURE_ORDER_VERSION = 1

FOOT_LABELS = (
    "away-from-pedal",
    "on-brake",
    "on-gas",
    "hovering-over-brake",
    "hovering-over-gas",
)
GAZE_LABELS = (
    "front",
    "speedometer",
    "rearview",
    "left-mirror",
    "right-mirror",
    "over-the-shoulder",
    "infotainment",
    "eyes-closed/looking-down",
)
HAND_LABELS = (
    "on-lap",
    "in-air",
    "hovering-over-wheel",
    "on-wheel",
    "cupholder",
    "infotainment",
)
OBJECT_LABELS = (
    "no-object",
    "cellphone",
    "tablet",
    "food",
    "beverage",
    "reading",
    "other",
)

N_FOOT = len(FOOT_LABELS)
N_GAZE = len(GAZE_LABELS)
N_HAND = len(HAND_LABELS)
N_STEREO = 2
N_OBJECT = len(OBJECT_LABELS)
FULL_DIM = N_FOOT + N_GAZE + 2 * N_HAND + N_STEREO + 2 * N_OBJECT

SUM_TOLERANCE = 1e-6
RENORMALIZE_TOLERANCE = 1e-3

# (json key, size) in canonical order; probability vectors are flagged.
FIELDS: tuple[tuple[str, int, bool], ...] = (
    ("foot", N_FOOT, True),
    ("gaze", N_GAZE, True),
    ("hand_l", N_HAND, True),
    ("hand_r", N_HAND, True),
    ("stereo", N_STEREO, False),
    ("obj_l", N_OBJECT, True),
    ("obj_r", N_OBJECT, True),
)

_offsets = {}
_pos = 0
for _name, _size, _ in FIELDS:
    _offsets[_name] = slice(_pos, _pos + _size)
    _pos += _size
FIELD_SLICES: dict[str, slice] = _offsets
assert _pos == FULL_DIM == 41

# Family -> json fields, in canonical order.
FAMILIES: dict[str, tuple[str, ...]] = {
    "F": ("foot",),
    "G": ("gaze",),
    "H": ("hand_l", "hand_r"),
    "S": ("stereo",),
    "O": ("obj_l", "obj_r"),
}
FAMILY_ORDER = tuple(FAMILIES)


def column_names() -> list[str]:
    """Column names of the full 41-dim vector (also the CSV header after ``t``)."""
    labels = {
        "foot": FOOT_LABELS,
        "gaze": GAZE_LABELS,
        "hand_l": HAND_LABELS,
        "hand_r": HAND_LABELS,
        "stereo": ("left", "right"),
        "obj_l": OBJECT_LABELS,
        "obj_r": OBJECT_LABELS,
    }
    return [f"{name}:{label}" for name, _, _ in FIELDS for label in labels[name]]


class Activity(enum.IntEnum):
    """Secondary activity labels with stable integer codes."""

    ATTENTIVE = 0
    TALKING = 1
    EYES_CLOSED = 2
    TEXTING = 3
    PHONE_CALL = 4
    INFOTAINMENT = 5
    COUNTING_CHANGE = 6
    READING = 7

    @property
    def label(self) -> str:
        return _ACTIVITY_LABELS[self]

    @classmethod
    def parse(cls, value: Any) -> "Activity":
        if isinstance(value, Activity):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip()
        for act in cls:
            if text in (act.label, act.name, act.name.lower()):
                return act
        if text.isdigit():
            return cls(int(text))
        raise ValidationError(f"unknown activity {value!r}")


_ACTIVITY_LABELS = {
    Activity.ATTENTIVE: "attentive",
    Activity.TALKING: "talking-to-copassenger",
    Activity.EYES_CLOSED: "lap/eyes-closed",
    Activity.TEXTING: "texting",
    Activity.PHONE_CALL: "phone-call",
    Activity.INFOTAINMENT: "infotainment",
    Activity.COUNTING_CHANGE: "counting-change",
    Activity.READING: "reading",
}


@dataclass(frozen=True)
class FeatureMask:
    """Which feature families are fed to a model."""

    foot: bool = False
    gaze: bool = False
    hand: bool = False
    stereo: bool = False
    obj: bool = False

    @classmethod
    def full(cls) -> "FeatureMask":
        return cls(True, True, True, True, True)

    @classmethod
    def parse(cls, text: str) -> "FeatureMask":
        """Parse ``"F+G+H"``, ``"FGH"`` or ``"full"``."""
        text = text.strip().upper()
        if text in ("FULL", "ALL"):
            return cls.full()
        letters = [c for c in text if c not in "+ ,"]
        unknown = set(letters) - set(FAMILY_ORDER)
        if unknown:
            raise ConfigError(f"unknown feature families {sorted(unknown)} in {text!r}")
        flags = {c: c in letters for c in FAMILY_ORDER}
        return cls(flags["F"], flags["G"], flags["H"], flags["S"], flags["O"])

    @property
    def families(self) -> tuple[str, ...]:
        flags = (self.foot, self.gaze, self.hand, self.stereo, self.obj)
        return tuple(f for f, on in zip(FAMILY_ORDER, flags) if on)

    @property
    def code(self) -> str:
        return "+".join(self.families)

    def is_empty(self) -> bool:
        return not self.families

    @property
    def dim(self) -> int:
        return len(mask_indices(self))

    def __str__(self) -> str:
        return self.code or "<empty>"


# Feature combinations evaluated by the default ablation, in table order.
ABLATION_MASKS: tuple[FeatureMask, ...] = tuple(
    FeatureMask.parse(code)
    for code in (
        "F", "G", "H", "H+S", "H+O", "H+S+O", "G+H+O",
        "G+H+S+O", "F+G+H+S", "F+G+H+O", "F+G+H+S+O",
    )
)


def mask_indices(mask: FeatureMask) -> np.ndarray:
    """Column indices into the full 41-dim vector selected by ``mask``."""
    if mask.is_empty():
        raise ConfigError("feature mask selects no families")
    cols: list[int] = []
    for fam in mask.families:
        for name in FAMILIES[fam]:
            s = FIELD_SLICES[name]
            cols.extend(range(s.start, s.stop))
    return np.asarray(cols, dtype=np.intp)


def _readonly(values: Iterable[float], size: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise ValidationError(f"{name}: expected {size} values, got {arr.size}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """One timestamped driver-state feature vector."""

    timestamp: float
    foot: np.ndarray
    gaze: np.ndarray
    hand_left: np.ndarray
    hand_right: np.ndarray
    stereo: np.ndarray
    object_left: np.ndarray
    object_right: np.ndarray

    def __post_init__(self) -> None:
        for attr, (name, size, _) in zip(_ATTRS, FIELDS):
            object.__setattr__(self, attr, _readonly(getattr(self, attr), size, name))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def from_vector(cls, timestamp: float, vector: np.ndarray) -> "FeatureFrame":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (FULL_DIM,):
            raise ValidationError(f"expected a {FULL_DIM}-dim vector, got shape {vector.shape}")
        return cls(timestamp, *(vector[FIELD_SLICES[name]] for name, _, _ in FIELDS))

    def vector(self) -> np.ndarray:
        """Full 41-dim vector in canonical order."""
        return np.concatenate([getattr(self, a) for a in _ATTRS])

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"t": self.timestamp}
        for attr, (name, _, _) in zip(_ATTRS, FIELDS):
            out[name] = getattr(self, attr).tolist()
        return out

    @classmethod
    def from_json(cls, obj: Mapping[str, Any], renormalize: bool = True) -> "FeatureFrame":
        """Parse a JSONL record; small probability drift is renormalized."""
        try:
            t = obj["t"]
            parts = [obj[name] for name, _, _ in FIELDS]
        except KeyError as exc:
            raise ValidationError(f"frame record missing key {exc.args[0]!r}") from None
        frame = cls(t, *parts)
        return ingest(frame) if renormalize else frame

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureFrame):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.vector(), other.vector())

    def __hash__(self) -> int:
        return hash((self.timestamp, self.vector().tobytes()))


_ATTRS = ("foot", "gaze", "hand_left", "hand_right", "stereo", "object_left", "object_right")


def validate_frame(frame: FeatureFrame, tol: float = SUM_TOLERANCE) -> list[str]:
    """Return every violated invariant of ``frame``; an empty list means valid."""
    problems: list[str] = []
    if not math.isfinite(frame.timestamp) or frame.timestamp < 0:
        problems.append(f"timestamp = {frame.timestamp} (must be finite and >= 0)")
    for attr, (name, _, is_prob) in zip(_ATTRS, FIELDS):
        values = getattr(frame, attr)
        if not np.all(np.isfinite(values)):
            problems.append(f"{name} has non-finite values")
            continue
        if is_prob:
            if np.any((values < 0) | (values > 1)):
                problems.append(f"{name} has values outside [0, 1]")
            total = float(values.sum())
            if abs(total - 1.0) > tol:
                problems.append(f"{name} sum = {total:.6g}")
        elif np.any(values < 0):
            problems.append(f"{name}: negative distance")
    return problems


def ingest(frame: FeatureFrame, tol: float = RENORMALIZE_TOLERANCE) -> FeatureFrame:
    """Accept a frame from an external producer.

    Probability vectors whose sums drift from 1 by at most ``tol`` are
    renormalized with a warning. Anything worse raises ValidationError.
    """
    problems = validate_frame(frame)
    if not problems:
        return frame
    hard = validate_frame(frame, tol=tol)
    if hard:
        raise ValidationError("; ".join(hard))
    parts = []
    for attr, (_, _, is_prob) in zip(_ATTRS, FIELDS):
        values = getattr(frame, attr)
        parts.append(values / values.sum() if is_prob else values)
    warnings.warn(f"renormalized frame at t={frame.timestamp}: {'; '.join(problems)}",
                  stacklevel=2)
    return FeatureFrame(frame.timestamp, *parts)


def flatten(frame: FeatureFrame, mask: FeatureMask) -> np.ndarray:
    """Concatenate the families enabled in ``mask`` in canonical order."""
    idx = mask_indices(mask)
    problems = validate_frame(frame)
    if problems:
        raise ValidationError("; ".join(problems))
    return frame.vector()[idx]


def validate_matrix(features: np.ndarray, tol: float = SUM_TOLERANCE) -> list[str]:
    """Vectorized validity check for an (n, 41) block of frames."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != FULL_DIM:
        return [f"expected shape (n, {FULL_DIM}), got {features.shape}"]
    problems = []
    if not np.all(np.isfinite(features)):
        problems.append("non-finite values")
    for name, _, is_prob in FIELDS:
        block = features[:, FIELD_SLICES[name]]
        if is_prob:
            if np.any((block < 0) | (block > 1)):
                problems.append(f"{name} has values outside [0, 1]")
            dev = np.abs(block.sum(axis=1) - 1.0)
            if dev.size and dev.max() > tol:
                problems.append(f"{name} sum off by {dev.max():.3g} (frame {int(dev.argmax())})")
        elif np.any(block < 0):
            problems.append(f"{name}: negative distance")
    return problems
