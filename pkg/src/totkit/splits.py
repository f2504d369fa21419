"""Stratified train/val/test assignment with augmentation-aware leakage rules."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .episodes import Episode
from .errors import ConfigError, DataError
from .features import FIELD_SLICES, Activity

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class DatasetManifest:
    splits: dict[str, str]  # episode_id -> split name
    seed: int
    rate: float
    ratios: tuple[float, ...] = (0.7, 0.15, 0.15)
    counts: dict[str, int] = field(default_factory=dict)  # activity label -> originals
    normalization: dict[str, float] = field(default_factory=dict)
    generator: dict[str, float] | None = None
    notes: dict[str, str] = field(default_factory=dict)

    def ids(self, split: str) -> list[str]:
        return [eid for eid, s in self.splits.items() if s == split]

    def select(self, episodes: Sequence[Episode], split: str, originals_only: bool = False) -> list[Episode]:
        out = [ep for ep in episodes if self.splits.get(ep.episode_id) == split]
        if originals_only:
            out = [ep for ep in out if ep.provenance != "augmented"]
        return out

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "rate": self.rate,
            "ratios": list(self.ratios),
            "counts": self.counts,
            "normalization": self.normalization,
            "generator": self.generator,
            "notes": self.notes,
            "splits": self.splits,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        try:
            return cls(
                splits=dict(obj["splits"]),
                seed=int(obj["seed"]),
                rate=float(obj["rate"]),
                ratios=tuple(obj.get("ratios", (0.7, 0.15, 0.15))),
                counts=dict(obj.get("counts", {})),
                normalization=dict(obj.get("normalization", {})),
                generator=obj.get("generator"),
                notes=dict(obj.get("notes", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed manifest: {exc}") from None


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items."""
    raw = np.asarray(ratios) * n
    base = np.floor(raw).astype(int)
    rem = n - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:rem]] += 1
    return base.tolist()


def split_dataset(episodes: Sequence[Episode], ratios: Sequence[float] = (0.7, 0.15, 0.15),
                  seed: int = 0, names: Sequence[str] = SPLIT_NAMES) -> DatasetManifest:
    """Assign every episode to a split, stratified by activity.

    Only original (non-augmented) episodes are apportioned; augmented ones
    inherit their source episode's split.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(names) or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be {len(names)} non-negative numbers summing to 1, got {ratios}")
    originals = [ep for ep in episodes if ep.provenance != "augmented"]
    if not originals:
        raise DataError("no original episodes to split")
    rate = originals[0].rate
    groups: dict[Activity | None, list[str]] = defaultdict(list)
    for ep in originals:
        groups[ep.activity].append(ep.episode_id)
    rng = np.random.default_rng(seed)
    splits: dict[str, str] = {}
    for act in sorted(groups, key=lambda a: -1 if a is None else int(a)):
        ids = sorted(groups[act])
        perm = rng.permutation(len(ids))
        pos = 0
        for name, size in zip(names, _allocate(len(ids), ratios)):
            for j in perm[pos:pos + size]:
                splits[ids[j]] = name
            pos += size
    for ep in episodes:
        if ep.provenance == "augmented":
            if ep.root_id not in splits:
                raise DataError(f"augmented episode {ep.episode_id} has unknown source {ep.root_id}")
            splits[ep.episode_id] = splits[ep.root_id]
    counts = Counter(ep.activity.label if ep.activity is not None else "unlabeled" for ep in originals)
    return DatasetManifest(splits=splits, seed=seed, rate=rate, ratios=ratios,
                           counts=dict(sorted(counts.items())))


def fit_stereo_normalization(episodes: Sequence[Episode]) -> dict[str, float]:
    """Affine constants mapping stereo distances to zero mean, unit SD."""
    vals = np.concatenate([ep.features[:, FIELD_SLICES["stereo"]].ravel() for ep in episodes])
    sd = float(vals.std())
    return {"stereo_offset": float(vals.mean()), "stereo_scale": 1.0 / sd if sd > 0 else 1.0}


def subsample_stratified(episodes: Sequence[Episode], fraction: float, seed: int) -> list[Episode]:
    """Keep ``fraction`` of the originals per activity, plus their augmentations."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    originals = [ep for ep in episodes if ep.provenance != "augmented"]
    by_act: dict[Activity | None, list[str]] = defaultdict(list)
    for ep in originals:
        by_act[ep.activity].append(ep.episode_id)
    rng = np.random.default_rng(seed)
    keep: set[str] = set()
    for act in sorted(by_act, key=lambda a: -1 if a is None else int(a)):
        ids = sorted(by_act[act])
        n = int(round(fraction * len(ids)))
        if n == 0:
            label = act.label if act is not None else "unlabeled"
            raise DataError(f"fraction {fraction} leaves no episodes of activity {label}")
        keep.update(ids[j] for j in rng.permutation(len(ids))[:n])
    return [ep for ep in episodes if ep.root_id in keep]
