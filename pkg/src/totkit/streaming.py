"""Per-frame take-over-time runtime and the TOT-vs-TTC safety gate."""

from __future__ import annotations

import enum
import json
import math
import sys
from dataclasses import dataclass
from typing import IO, Any, Iterable, Iterator

import numpy as np

from .episodes import Episode
from .errors import ConfigError, DataError, ValidationError
from .features import FeatureFrame, validate_frame
from .model import ModelConfig, ModelParams, forward_window, prepare_inputs

DEFAULT_STALENESS = 0.5


class Status(str, enum.Enum):
    WARMING = "warming"
    OK = "ok"
    STALE = "stale"


class Action(str, enum.Enum):
    HANDOVER = "Handover"
    SAFE_STOP = "SafeStop"


@dataclass(frozen=True)
class Prediction:
    timestamp: float
    status: Status
    outputs: tuple[float, float, float] | None = None  # (o_e, o_f, o_h)

    @property
    def tot(self) -> float | None:
        return None if self.outputs is None else max(self.outputs)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"t": self.timestamp, "status": self.status.value}
        if self.outputs is not None:
            out.update(o_e=self.outputs[0], o_f=self.outputs[1], o_h=self.outputs[2], tot=self.tot)
        return out


@dataclass(frozen=True)
class GateDecision:
    action: Action
    tot: float
    ttc: float
    epsilon: float

    def to_json(self) -> dict[str, Any]:
        return {"decision": self.action.value, "tot": self.tot, "ttc": self.ttc, "epsilon": self.epsilon}


def safety_gate(tot: float, ttc: float, epsilon: float) -> GateDecision:
    """Hand over control iff ``tot + epsilon < ttc``; otherwise stop safely."""
    for name, v in (("tot", tot), ("ttc", ttc), ("epsilon", epsilon)):
        if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v >= 0):
            raise ConfigError(f"{name} must be finite and non-negative, got {v!r}")
    action = Action.HANDOVER if tot + epsilon < ttc else Action.SAFE_STOP
    return GateDecision(action, float(tot), float(ttc), float(epsilon))


class StreamRuntime:
    """Sliding-window predictor fed one frame at a time.

    Frames are kept in a doubled ring buffer so the current window is always
    a contiguous slice, and each prediction is exactly
    ``forward_window(params, last_window)``. When the gap to the previous
    frame exceeds ``staleness`` seconds, the previous frame is repeated to
    fill the gap and predictions are marked ``stale`` until the filled frames
    have left the window. One thread of control per runtime.
    """

    def __init__(self, params: ModelParams, config: ModelConfig, staleness: float = DEFAULT_STALENESS):
        params.check(config)
        if staleness <= 0:
            raise ConfigError("staleness bound must be positive")
        self.params = params
        self.config = config
        self.staleness = staleness
        self.size = config.window_frames
        self._buf = np.zeros((2 * self.size, config.input_dim))
        self._synthetic = np.zeros(2 * self.size, dtype=bool)
        self._pos = 0
        self._count = 0
        self.last_timestamp: float | None = None
        self.last_prediction: Prediction | None = None

    def __len__(self) -> int:
        return min(self._count, self.size)

    def reset(self) -> None:
        self._pos = 0
        self._count = 0
        self._synthetic[:] = False
        self.last_timestamp = None
        self.last_prediction = None

    def _append(self, row: np.ndarray, synthetic: bool) -> None:
        self._buf[self._pos] = row
        self._buf[self._pos + self.size] = row
        self._synthetic[self._pos] = synthetic
        self._synthetic[self._pos + self.size] = synthetic
        self._pos = (self._pos + 1) % self.size
        self._count += 1

    def window(self) -> np.ndarray:
        """The buffered frames in time order (oldest first)."""
        n = len(self)
        start = self._pos if self._count >= self.size else 0
        return self._buf[start:start + n]

    def push_frame(self, frame: FeatureFrame, timestamp: float | None = None) -> Prediction:
        t = frame.timestamp if timestamp is None else float(timestamp)
        if self.last_timestamp is not None and t < self.last_timestamp:
            raise DataError(f"frame at t={t} arrived after t={self.last_timestamp}")
        problems = validate_frame(frame)
        if problems:
            raise ValidationError("; ".join(problems))
        row = prepare_inputs(self.config, frame.vector())
        if self.last_timestamp is not None:
            gap = t - self.last_timestamp
            if gap > self.staleness:
                n_fill = min(int(round(gap * self.config.rate)) - 1, self.size)
                prev = self._buf[(self._pos - 1) % self.size].copy()
                for _ in range(max(n_fill, 0)):
                    self._append(prev, synthetic=True)
        self._append(row, synthetic=False)
        self.last_timestamp = t
        if self._count < self.size:
            pred = Prediction(t, Status.WARMING)
        else:
            start = self._pos
            out = forward_window(self.params, self._buf[start:start + self.size])
            stale = bool(self._synthetic[start:start + self.size].any())
            pred = Prediction(t, Status.STALE if stale else Status.OK,
                              (float(out[0]), float(out[1]), float(out[2])))
        self.last_prediction = pred
        return pred


def _decayed_targets(targets: tuple[float, float, float], elapsed: float) -> np.ndarray:
    return np.maximum(np.asarray(targets) - elapsed, 0.0)


def replay_stream(runtime: StreamRuntime, source: Episode | Iterable[FeatureFrame]) -> list[dict[str, Any]]:
    """Push every frame through a fresh runtime state and collect a trace.

    For a labeled episode, frames from the TOR until the take-over completes
    also carry absolute errors against the remaining times (targets minus
    the elapsed time since the TOR, clamped at 0).
    """
    runtime.reset()
    trace = []
    if isinstance(source, Episode):
        frames: Iterable[FeatureFrame] = (source.frame(k) for k in range(source.n_frames))
        labeled = source.targets is not None
    else:
        frames, labeled = source, False
    for k, frame in enumerate(frames):
        pred = runtime.push_frame(frame)
        rec = {"index": k, **pred.to_json()}
        if labeled and pred.outputs is not None:
            elapsed = (k - source.tor_index) / source.rate
            if 0 <= elapsed <= source.tot:
                remaining = _decayed_targets(source.targets, elapsed)
                err = np.abs(np.asarray(pred.outputs) - remaining)
                rec.update(
                    elapsed=elapsed,
                    target_e=float(remaining[0]), target_f=float(remaining[1]), target_h=float(remaining[2]),
                    err_e=float(err[0]), err_f=float(err[1]), err_h=float(err[2]),
                    err_tot=abs(pred.tot - float(remaining.max())),
                )
        trace.append(rec)
    return trace


def run_live(runtime: StreamRuntime, lines: Iterable[str], out: IO[str] = sys.stdout,
             ttc: float | None = None, epsilon: float = 0.0) -> int:
    """Read JSONL frames, write one JSONL prediction per frame; returns frames seen."""
    n = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            frame = FeatureFrame.from_json(json.loads(line))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise DataError(f"input line {lineno}: {exc}") from None
        pred = runtime.push_frame(frame)
        rec = pred.to_json()
        if ttc is not None and pred.tot is not None:
            rec["gate"] = safety_gate(pred.tot, ttc, epsilon).to_json()["decision"]
        out.write(json.dumps(rec) + "\n")
        out.flush()
        n += 1
    return n


def iter_predictions(runtime: StreamRuntime, frames: Iterable[FeatureFrame]) -> Iterator[Prediction]:
    for frame in frames:
        yield runtime.push_frame(frame)
