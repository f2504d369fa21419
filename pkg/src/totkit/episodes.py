"""Take-over episodes: segmentation of sessions, target annotation, TOR shifts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DataError, LabelError
from .features import FULL_DIM, Activity, FeatureFrame, validate_matrix

PRE_TOR_SECONDS = 20.0
POST_TOR_SECONDS = 10.0
DEFAULT_RATE = 15.0
DEFAULT_GUARD = 0.1
PROVENANCES = ("real", "synthetic", "augmented")


class SegmentationWarning(UserWarning):
    """A TOR was skipped for lack of pre- or post-roll context."""


class AugmentationWarning(UserWarning):
    """An episode could not be TOR-shifted."""


def frames_for(seconds: float, rate: float) -> int:
    return int(round(seconds * rate))


@dataclass(frozen=True, eq=False)
class Episode:
    """A 30 s window around one take-over request.

    ``features`` holds the full 41-dim frames row by row (read-only);
    ``targets`` are ``(t_e, t_f, t_h)`` seconds after the TOR, or ``None``
    for unlabeled episodes.
    """

    episode_id: str
    features: np.ndarray
    timestamps: np.ndarray
    tor_index: int
    rate: float = DEFAULT_RATE
    targets: tuple[float, float, float] | None = None
    activity: Activity | None = None
    provenance: str = "real"
    source_id: str | None = None
    shift: float = 0.0

    def __post_init__(self) -> None:
        feats = np.array(self.features, dtype=np.float64)
        ts = np.array(self.timestamps, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != FULL_DIM or ts.shape != (feats.shape[0],):
            raise DataError(f"episode {self.episode_id}: features {feats.shape} / timestamps {ts.shape}")
        feats.flags.writeable = False
        ts.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "timestamps", ts)
        if self.provenance not in PROVENANCES:
            raise DataError(f"unknown provenance {self.provenance!r}")
        if self.activity is not None:
            object.__setattr__(self, "activity", Activity.parse(self.activity))
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(float(t) for t in self.targets))

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def tot(self) -> float:
        if self.targets is None:
            raise LabelError(f"episode {self.episode_id} has no targets")
        return max(self.targets)

    @property
    def tor_time(self) -> float:
        return float(self.timestamps[self.tor_index])

    @property
    def root_id(self) -> str:
        """Id of the original episode this one derives from."""
        return self.source_id or self.episode_id

    def window(self, n_frames: int, end_index: int | None = None) -> np.ndarray:
        """The ``n_frames`` rows ending at and including ``end_index`` (default: TOR)."""
        end = self.tor_index if end_index is None else end_index
        start = end - n_frames + 1
        if start < 0 or end >= self.n_frames:
            raise DataError(f"episode {self.episode_id}: window [{start}, {end}] out of range")
        return self.features[start:end + 1]

    def frame(self, k: int) -> FeatureFrame:
        return FeatureFrame.from_vector(self.timestamps[k], self.features[k])

    def frames(self) -> list[FeatureFrame]:
        return [self.frame(k) for k in range(self.n_frames)]

    def same_as(self, other: "Episode") -> bool:
        """Bit-exact equality of every field."""
        return (
            self.episode_id == other.episode_id
            and self.tor_index == other.tor_index
            and self.rate == other.rate
            and self.targets == other.targets
            and self.activity == other.activity
            and self.provenance == other.provenance
            and self.source_id == other.source_id
            and self.shift == other.shift
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.timestamps, other.timestamps)
        )


def check_episode(ep: Episode) -> None:
    """Raise DataError unless ``ep`` has canonical length, TOR position and valid frames."""
    n_pre = frames_for(PRE_TOR_SECONDS, ep.rate)
    n_total = n_pre + frames_for(POST_TOR_SECONDS, ep.rate)
    if ep.n_frames != n_total or ep.tor_index != n_pre:
        raise DataError(f"episode {ep.episode_id}: {ep.n_frames} frames with TOR at {ep.tor_index}, "
                        f"expected {n_total} with TOR at {n_pre}")
    problems = validate_matrix(ep.features)
    if problems:
        raise DataError(f"episode {ep.episode_id}: {'; '.join(problems)}")
    if ep.targets is not None:
        _check_targets(ep.targets)


def _check_targets(targets: Sequence[float]) -> None:
    if len(targets) != 3:
        raise LabelError(f"expected (t_e, t_f, t_h), got {targets!r}")
    for name, t in zip(("t_e", "t_f", "t_h"), targets):
        if not (math.isfinite(t) and 0.0 < t <= POST_TOR_SECONDS):
            raise LabelError(f"{name} = {t} outside the post-TOR window (0, {POST_TOR_SECONDS}]")


def segment_session(stream: Sequence[FeatureFrame] | tuple[np.ndarray, np.ndarray],
                    tor_times: Sequence[float], rate: float = DEFAULT_RATE,
                    session_id: str = "session") -> list[Episode]:
    """Cut a long feature stream into one 30 s episode per TOR.

    ``stream`` is a sequence of frames or a ``(timestamps, features)`` pair.
    The TOR frame is the stream frame nearest each TOR time. TORs without a
    full 20 s pre-roll and 10 s post-roll are skipped with a warning.
    """
    if isinstance(stream, tuple):
        ts, feats = (np.asarray(a, dtype=np.float64) for a in stream)
    else:
        ts = np.array([f.timestamp for f in stream], dtype=np.float64)
        feats = np.array([f.vector() for f in stream], dtype=np.float64).reshape(len(ts), FULL_DIM)
    if ts.size and np.any(np.diff(ts) <= 0):
        bad = int(np.argmax(np.diff(ts) <= 0)) + 1
        raise DataError(f"timestamps not strictly increasing at frame {bad} (t={ts[bad]})")
    n_pre = frames_for(PRE_TOR_SECONDS, rate)
    n_post = frames_for(POST_TOR_SECONDS, rate)
    episodes = []
    for j, tor in enumerate(tor_times):
        if ts.size == 0 or not ts[0] <= tor <= ts[-1]:
            warnings.warn(f"TOR at {tor} s lies outside the stream; skipped", SegmentationWarning,
                          stacklevel=2)
            continue
        k = int(np.searchsorted(ts, tor))
        if k > 0 and (k == ts.size or tor - ts[k - 1] <= ts[k] - tor):
            k -= 1
        start, stop = k - n_pre, k + n_post
        if start < 0 or stop > ts.size:
            side = "pre-roll" if start < 0 else "post-roll"
            warnings.warn(f"TOR at {tor} s has insufficient {side}; skipped", SegmentationWarning,
                          stacklevel=2)
            continue
        episodes.append(Episode(
            episode_id=f"{session_id}-{j:04d}",
            features=feats[start:stop],
            timestamps=ts[start:stop],
            tor_index=n_pre,
            rate=rate,
        ))
    return episodes


def annotate_targets(episode: Episode, t_e: float, t_f: float, t_h: float,
                     activity: Activity | int | str | None = None) -> Episode:
    """Attach the eyes/foot/hands marker times (seconds after TOR)."""
    targets = (float(t_e), float(t_f), float(t_h))
    _check_targets(targets)
    act = episode.activity if activity is None else Activity.parse(activity)
    return replace(episode, targets=targets, activity=act)


def shift_episode(episode: Episode, delta: float, episode_id: str | None = None) -> Episode:
    """Move the TOR ``delta`` seconds later and adjust the targets.

    Frames slide forward by ``round(delta * rate)`` so that the TOR stays at
    the canonical index; the tail is padded by repeating the last frame.
    """
    if episode.targets is None:
        raise LabelError(f"episode {episode.episode_id} is unlabeled")
    s = frames_for(delta, episode.rate)
    n = episode.n_frames
    if not 0 <= s < n:
        raise DataError(f"shift of {delta} s out of range")
    feats = np.concatenate([episode.features[s:], np.repeat(episode.features[-1:], s, axis=0)])
    dt = 1.0 / episode.rate
    pad_ts = episode.timestamps[-1] + dt * np.arange(1, s + 1)
    ts = np.concatenate([episode.timestamps[s:], pad_ts])
    targets = tuple(t - delta for t in episode.targets)
    return replace(
        episode,
        episode_id=episode_id or f"{episode.episode_id}~{delta:.6f}",
        features=feats,
        timestamps=ts,
        targets=targets,
        provenance="augmented",
        source_id=episode.root_id,
        shift=episode.shift + delta,
    )


def augment_tor(episode: Episode, rng: np.random.Generator, k: int = 1,
                guard: float = DEFAULT_GUARD) -> list[Episode]:
    """``k`` copies with the TOR moved to a random time before the take-over begins.

    Each shift is uniform in ``(0, min(targets) - guard)``. Episodes whose
    earliest marker is within ``guard`` of the TOR return ``[]`` with a warning.
    """
    if episode.targets is None:
        raise LabelError(f"episode {episode.episode_id} is unlabeled")
    limit = min(episode.targets) - guard
    if limit <= 0:
        warnings.warn(f"episode {episode.episode_id}: min target {min(episode.targets):.3f} s "
                      f"<= guard {guard} s; not augmentable", AugmentationWarning, stacklevel=2)
        return []
    out = []
    for j in range(k):
        delta = float(rng.uniform(0.0, limit))
        while delta == 0.0:
            delta = float(rng.uniform(0.0, limit))
        out.append(shift_episode(episode, delta, episode_id=f"{episode.episode_id}~a{j}"))
    return out


def augment_dataset(episodes: Sequence[Episode], seed: int, k: int = 1,
                    guard: float = DEFAULT_GUARD) -> list[Episode]:
    """Originals followed by ``k`` TOR-shifted copies of each augmentable one."""
    out = list(episodes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AugmentationWarning)
        for i, ep in enumerate(episodes):
            if ep.provenance == "augmented":
                continue
            out.extend(augment_tor(ep, np.random.default_rng([seed, i]), k=k, guard=guard))
    skipped = [w for w in caught if issubclass(w.category, AugmentationWarning)]
    if skipped:
        warnings.warn(f"{len(skipped)} episode(s) not augmentable (min target <= guard)",
                      AugmentationWarning, stacklevel=2)
    return out
