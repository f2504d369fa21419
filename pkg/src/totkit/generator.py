"""Synthetic take-over episodes with activity-dependent timing and features.

Target times are drawn from per-activity truncated normals. Feature
trajectories are then synthesized to agree with the drawn times: before
the TOR each family follows an activity profile; after it the gaze moves
to the road by ``t_e``, the foot reaches the brake by ``t_f`` and the leading
hand reaches the wheel by ``t_h``. The default timing constants are
calibration choices that respect the qualitative orderings (distracting
activities slower, hands slowest), not measured values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .episodes import POST_TOR_SECONDS, PRE_TOR_SECONDS, Episode, frames_for
from .errors import ConfigError
from .features import (
    FIELD_SLICES,
    FULL_DIM,
    N_FOOT,
    N_GAZE,
    N_HAND,
    N_OBJECT,
    Activity,
)

TARGET_MIN = 0.15
TARGET_MAX = POST_TOR_SECONDS

# Episode counts per activity for the full 1,375-event mirror, in code order.
CDS_COUNTS: dict[Activity, int] = {
    Activity.ATTENTIVE: 308,
    Activity.TALKING: 182,
    Activity.EYES_CLOSED: 85,
    Activity.TEXTING: 262,
    Activity.PHONE_CALL: 42,
    Activity.INFOTAINMENT: 299,
    Activity.COUNTING_CHANGE: 97,
    Activity.READING: 100,
}


@dataclass(frozen=True)
class TimingParams:
    """Mean and SD (seconds) of one activity's eyes/foot/hands marker times."""

    mean_e: float
    sd_e: float
    mean_f: float
    sd_f: float
    mean_h: float
    sd_h: float

    @property
    def means(self) -> tuple[float, float, float]:
        return (self.mean_e, self.mean_f, self.mean_h)

    @property
    def sds(self) -> tuple[float, float, float]:
        return (self.sd_e, self.sd_f, self.sd_h)


def _default_timing() -> dict[Activity, TimingParams]:
    A = Activity
    return {
        A.ATTENTIVE: TimingParams(0.60, 0.20, 1.00, 0.30, 1.95, 0.35),
        A.TALKING: TimingParams(0.70, 0.25, 1.10, 0.35, 2.20, 0.45),
        A.EYES_CLOSED: TimingParams(0.80, 0.25, 1.15, 0.35, 2.30, 0.50),
        A.TEXTING: TimingParams(1.00, 0.35, 1.60, 0.45, 3.60, 0.95),
        A.PHONE_CALL: TimingParams(0.90, 0.30, 1.50, 0.45, 3.20, 0.80),
        A.INFOTAINMENT: TimingParams(0.70, 0.25, 1.10, 0.35, 2.40, 0.55),
        A.COUNTING_CHANGE: TimingParams(1.10, 0.35, 1.70, 0.50, 3.80, 1.05),
        A.READING: TimingParams(1.20, 0.40, 1.80, 0.50, 4.40, 1.20),
    }


@dataclass(frozen=True)
class GeneratorParams:
    timing: dict[Activity, TimingParams] = field(default_factory=_default_timing)
    rate: float = 15.0
    noise_amp: float = 0.05  # mixing weight of per-frame simplex noise
    profile_jitter: float = 0.05  # per-episode perturbation of activity profiles
    stereo_noise: float = 0.003  # metres
    gaze_switch_frac: float = 0.5  # fraction of t_e spent turning to the road
    gaze_sharpness: float = 2.0  # exponent of the gaze blend (higher = later snap)
    hand_inair_frac: float = 0.35  # fraction of t_h spent lifting from the activity
    hand_hover_frac: float = 0.25  # fraction of t_h spent hovering over the wheel
    foot_hover_frac: float = 0.4  # fraction of t_f spent hovering over the brake
    second_hand_lag: tuple[float, float] = (0.2, 1.0)  # seconds, uniform

    def __post_init__(self) -> None:
        problems = self.validate()
        if problems:
            raise ConfigError("; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        missing = set(Activity) - set(self.timing)
        if missing:
            problems.append(f"missing timing for {sorted(a.label for a in missing)}")
        for act, tp in self.timing.items():
            if min(tp.means) <= 0 or min(tp.sds) <= 0:
                problems.append(f"{act.label}: means and SDs must be positive")
        if not 0 <= self.noise_amp <= 0.1:
            problems.append("noise_amp must lie in [0, 0.1] to keep frame contracts")
        if not 0 <= self.profile_jitter <= 0.1:
            problems.append("profile_jitter must lie in [0, 0.1]")
        if self.rate <= 0:
            problems.append("rate must be positive")
        for name in ("gaze_switch_frac", "hand_inair_frac", "hand_hover_frac", "foot_hover_frac"):
            if not 0 < getattr(self, name) < 1:
                problems.append(f"{name} must lie in (0, 1)")
        if self.hand_inair_frac + self.hand_hover_frac >= 1:
            problems.append("hand_inair_frac + hand_hover_frac must be < 1")
        lo, hi = self.second_hand_lag
        if not 0 <= lo <= hi:
            problems.append("second_hand_lag must satisfy 0 <= lo <= hi")
        return problems

    def to_flat(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for f in fields(self):
            if f.name == "timing":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                out[f"{f.name}_lo"], out[f"{f.name}_hi"] = value
            else:
                out[f.name] = value
        for act, tp in self.timing.items():
            for tf in fields(tp):
                out[f"{act.name.lower()}.{tf.name}"] = getattr(tp, tf.name)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, float]) -> "GeneratorParams":
        base = cls()
        timing = {a: dict(vars(tp)) for a, tp in base.timing.items()}
        kwargs: dict = {}
        for key, value in flat.items():
            if "." in key:
                act_name, attr = key.split(".", 1)
                try:
                    act = Activity[act_name.upper()]
                except KeyError:
                    raise ConfigError(f"unknown activity in key {key!r}") from None
                if attr not in timing[act]:
                    raise ConfigError(f"unknown timing field in key {key!r}")
                timing[act][attr] = float(value)
            elif key in ("second_hand_lag_lo", "second_hand_lag_hi"):
                lo, hi = kwargs.get("second_hand_lag", base.second_hand_lag)
                kwargs["second_hand_lag"] = (float(value), hi) if key.endswith("lo") else (lo, float(value))
            elif key in {f.name for f in fields(cls)}:
                kwargs[key] = float(value)
            else:
                raise ConfigError(f"unknown generator key {key!r}")
        kwargs["timing"] = {a: TimingParams(**v) for a, v in timing.items()}
        return cls(**kwargs)


# Activity profiles: pre-TOR probability vectors per family.
def _vec(size: int, **mass: float) -> np.ndarray:
    v = np.zeros(size)
    for idx, m in mass.items():
        v[int(idx[1:])] = m
    return v / v.sum()


# gaze: 0 front, 1 speedo, 2 rearview, 3 left, 4 right, 5 shoulder, 6 infotainment, 7 down
_GAZE = {
    Activity.ATTENTIVE: _vec(N_GAZE, g0=0.75, g1=0.06, g2=0.06, g3=0.05, g4=0.05, g6=0.02, g7=0.01),
    Activity.TALKING: _vec(N_GAZE, g0=0.50, g4=0.25, g5=0.15, g2=0.05, g6=0.05),
    Activity.EYES_CLOSED: _vec(N_GAZE, g7=0.88, g0=0.07, g6=0.05),
    Activity.TEXTING: _vec(N_GAZE, g7=0.82, g6=0.08, g0=0.10),
    Activity.PHONE_CALL: _vec(N_GAZE, g0=0.45, g3=0.20, g7=0.20, g1=0.10, g2=0.05),
    Activity.INFOTAINMENT: _vec(N_GAZE, g6=0.75, g0=0.15, g7=0.10),
    Activity.COUNTING_CHANGE: _vec(N_GAZE, g7=0.65, g6=0.20, g0=0.15),
    Activity.READING: _vec(N_GAZE, g7=0.86, g0=0.08, g6=0.06),
}
# hand: 0 lap, 1 in-air, 2 hovering, 3 on-wheel, 4 cupholder, 5 infotainment; (left, right)
_HAND = {
    Activity.ATTENTIVE: (_vec(N_HAND, h0=0.65, h2=0.30, h1=0.05), _vec(N_HAND, h0=0.60, h2=0.35, h1=0.05)),
    Activity.TALKING: (_vec(N_HAND, h0=0.70, h1=0.25, h2=0.05), _vec(N_HAND, h1=0.55, h0=0.40, h2=0.05)),
    Activity.EYES_CLOSED: (_vec(N_HAND, h0=0.92, h1=0.08), _vec(N_HAND, h0=0.92, h1=0.08)),
    Activity.TEXTING: (_vec(N_HAND, h1=0.60, h0=0.40), _vec(N_HAND, h1=0.75, h0=0.25)),
    Activity.PHONE_CALL: (_vec(N_HAND, h1=0.85, h0=0.15), _vec(N_HAND, h0=0.75, h2=0.20, h1=0.05)),
    Activity.INFOTAINMENT: (_vec(N_HAND, h0=0.80, h2=0.15, h1=0.05), _vec(N_HAND, h5=0.75, h1=0.25)),
    Activity.COUNTING_CHANGE: (_vec(N_HAND, h1=0.50, h4=0.40, h0=0.10), _vec(N_HAND, h4=0.70, h1=0.30)),
    Activity.READING: (_vec(N_HAND, h1=0.70, h0=0.30), _vec(N_HAND, h1=0.70, h0=0.30)),
}
# object: 0 none, 1 cellphone, 2 tablet, 3 food, 4 beverage, 5 reading, 6 other; (left, right)
_NONE = _vec(N_OBJECT, o0=0.97, o4=0.02, o6=0.01)
_OBJECT = {
    Activity.ATTENTIVE: (_NONE, _NONE),
    Activity.TALKING: (_NONE, _vec(N_OBJECT, o0=0.92, o4=0.05, o6=0.03)),
    Activity.EYES_CLOSED: (_NONE, _NONE),
    Activity.TEXTING: (_vec(N_OBJECT, o0=0.60, o1=0.40), _vec(N_OBJECT, o1=0.93, o2=0.05, o6=0.02)),
    Activity.PHONE_CALL: (_vec(N_OBJECT, o1=0.93, o6=0.05, o0=0.02), _NONE),
    Activity.INFOTAINMENT: (_NONE, _vec(N_OBJECT, o0=0.95, o6=0.05)),
    Activity.COUNTING_CHANGE: (_vec(N_OBJECT, o6=0.80, o0=0.20), _vec(N_OBJECT, o6=0.90, o0=0.10)),
    Activity.READING: (_vec(N_OBJECT, o5=0.90, o0=0.10), _vec(N_OBJECT, o5=0.90, o2=0.05, o0=0.05)),
}
# foot: 0 away, 1 on-brake, 2 on-gas, 3 hover-brake, 4 hover-gas
_FOOT_DEFAULT = _vec(N_FOOT, f0=0.85, f3=0.10, f4=0.05)
_FOOT = {a: _FOOT_DEFAULT for a in Activity}
_FOOT[Activity.ATTENTIVE] = _vec(N_FOOT, f0=0.55, f3=0.35, f4=0.10)
_FOOT[Activity.TALKING] = _vec(N_FOOT, f0=0.70, f3=0.20, f4=0.10)
# Hand-to-wheel distances (metres), (left, right).
_STEREO = {
    Activity.ATTENTIVE: (0.22, 0.24),
    Activity.TALKING: (0.30, 0.34),
    Activity.EYES_CLOSED: (0.36, 0.36),
    Activity.TEXTING: (0.42, 0.40),
    Activity.PHONE_CALL: (0.50, 0.30),
    Activity.INFOTAINMENT: (0.32, 0.45),
    Activity.COUNTING_CHANGE: (0.45, 0.52),
    Activity.READING: (0.46, 0.46),
}

_GAZE_FRONT = _vec(N_GAZE, g0=1.0)
_HAND_AIR = _vec(N_HAND, h1=1.0)
_HAND_HOVER = _vec(N_HAND, h2=1.0)
_HAND_WHEEL = _vec(N_HAND, h3=1.0)
_OBJ_NONE = _vec(N_OBJECT, o0=1.0)
_FOOT_HOVER = _vec(N_FOOT, f3=1.0)
_FOOT_BRAKE = _vec(N_FOOT, f1=1.0)
WHEEL_DISTANCE = 0.02


def activity_profile(activity: Activity) -> dict[str, np.ndarray]:
    """Pre-TOR base vectors of one activity, keyed by frame field."""
    left, right = _HAND[activity]
    obj_l, obj_r = _OBJECT[activity]
    return {
        "foot": _FOOT[activity], "gaze": _GAZE[activity], "hand_l": left, "hand_r": right,
        "stereo": np.array(_STEREO[activity]), "obj_l": obj_l, "obj_r": obj_r,
    }


def sample_targets(timing: TimingParams, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``(t_e, t_f, t_h)`` by rejection from normals truncated to ``[0.15, 10]``."""
    n = 1 if size is None else size
    out = np.empty((n, 3))
    for j, (mu, sd) in enumerate(zip(timing.means, timing.sds)):
        filled = 0
        while filled < n:
            draw = rng.normal(mu, sd, size=max(n - filled, 1) * 2)
            draw = draw[(draw >= TARGET_MIN) & (draw <= TARGET_MAX)][: n - filled]
            out[filled:filled + draw.size, j] = draw
            filled += draw.size
    return out[0] if size is None else out


def _blend_schedule(n_post: int, stages: Sequence[tuple[int, int]], power: float = 1.0) -> np.ndarray:
    """Per-frame stage progress: ``stages`` are ``(start, end)`` frame pairs.

    Returns ``(n_post, len(stages))`` weights in [0, 1], each ramping from 0 at
    ``start`` to 1 at ``end`` (inclusive) and staying at 1 afterwards.
    """
    k = np.arange(n_post)[:, None].astype(np.float64)
    starts = np.array([s for s, _ in stages], dtype=np.float64)
    ends = np.array([e for _, e in stages], dtype=np.float64)
    span = np.maximum(ends - starts, 1.0)
    w = np.clip((k - starts) / span, 0.0, 1.0) ** power
    w[k >= ends] = 1.0
    return w


def _chain(start: np.ndarray, targets: Sequence[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Sequential blends: start -> targets[0] -> targets[1] ... with per-stage weights."""
    cur = np.broadcast_to(start, (weights.shape[0], start.size)).copy()
    for j, tgt in enumerate(targets):
        w = weights[:, j:j + 1]
        cur = (1.0 - w) * cur + w * tgt
    return cur


def _noisy(p: np.ndarray, amp: float, rng: np.random.Generator) -> np.ndarray:
    """Mix each row with a random simplex point, keeping rows on the simplex."""
    if amp == 0:
        return p
    u = rng.dirichlet(np.ones(p.shape[-1]), size=p.shape[0])
    return (p + amp * u) / (1.0 + amp)


def _jitter(p: np.ndarray, amp: float, rng: np.random.Generator) -> np.ndarray:
    return (1.0 - amp) * p + amp * rng.dirichlet(np.ones(p.size))


def generate_episode(activity: Activity, params: GeneratorParams, rng: np.random.Generator,
                     episode_id: str = "syn", targets: Sequence[float] | None = None) -> Episode:
    """One synthetic labeled episode; ``targets`` overrides the timing draw."""
    activity = Activity.parse(activity)
    r = params.rate
    n_pre = frames_for(PRE_TOR_SECONDS, r)
    n_post = frames_for(POST_TOR_SECONDS, r)
    if targets is None:
        t_e, t_f, t_h = sample_targets(params.timing[activity], rng)
    else:
        t_e, t_f, t_h = (float(t) for t in targets)
    prof = {k: (v if k == "stereo" else _jitter(v, params.profile_jitter, rng))
            for k, v in activity_profile(activity).items()}
    stereo0 = prof["stereo"] * np.exp(0.1 * rng.standard_normal(2))

    k_e = frames_for(t_e, r)
    k_f = frames_for(t_f, r)
    k_h = frames_for(t_h, r)
    lead = int(rng.integers(2))  # 0 = left hand reaches the wheel first
    lag_lo, lag_hi = params.second_hand_lag
    k_h2 = min(k_h + frames_for(rng.uniform(lag_lo, lag_hi), r), n_post - 1)

    # Pre-TOR part: stationary profile plus noise, for all n_pre frames and the post-TOR
    # frames (the post-TOR base is overwritten by the trajectories below).
    n = n_pre + n_post
    block = np.empty((n, FULL_DIM))

    def put(name: str, post: np.ndarray) -> None:
        base = np.vstack([np.broadcast_to(prof[name], (n_pre, prof[name].size)), post])
        block[:, FIELD_SLICES[name]] = _noisy(base, params.noise_amp, rng)

    g0 = max(int(np.floor(k_e * (1.0 - params.gaze_switch_frac))), 0)
    put("gaze", _chain(prof["gaze"], [_GAZE_FRONT], _blend_schedule(n_post, [(g0, k_e)], params.gaze_sharpness)))

    f_hover = max(int(np.floor(k_f * (1.0 - params.foot_hover_frac))), 0)
    f_start = max(int(np.floor(f_hover * 0.5)), 0)
    put("foot", _chain(prof["foot"], [_FOOT_HOVER, _FOOT_BRAKE],
                       _blend_schedule(n_post, [(f_start, f_hover), (f_hover, k_f)])))

    stereo_post = np.empty((n_post, 2))
    for side, name, obj in ((0, "hand_l", "obj_l"), (1, "hand_r", "obj_r")):
        k_end = k_h if side == lead else k_h2
        # Activity -> in-air (a0..a1) -> hovering (a1..b) -> on-wheel at k_end.
        a0 = max(int(np.floor(k_end * (1.0 - params.hand_inair_frac - params.hand_hover_frac))), 0)
        a1 = max(int(np.floor(k_end * (1.0 - params.hand_hover_frac))), a0)
        b = a1 + int(np.floor(0.6 * (k_end - a1)))
        w = _blend_schedule(n_post, [(a0, a1), (a1, b), (b, k_end)])
        put(name, _chain(prof[name], [_HAND_AIR, _HAND_HOVER, _HAND_WHEEL], w))
        put(obj, _chain(prof[obj], [_OBJ_NONE], w[:, :1]))
        progress = _blend_schedule(n_post, [(a0, k_end)])[:, 0]
        stereo_post[:, side] = stereo0[side] + (WHEEL_DISTANCE - stereo0[side]) * progress
    stereo = np.vstack([np.broadcast_to(stereo0, (n_pre, 2)), stereo_post])
    block[:, FIELD_SLICES["stereo"]] = np.abs(stereo + params.stereo_noise * rng.standard_normal((n, 2)))

    ts = (np.arange(n) - n_pre) / r + PRE_TOR_SECONDS
    return Episode(
        episode_id=episode_id,
        features=block,
        timestamps=ts,
        tor_index=n_pre,
        rate=r,
        targets=(float(t_e), float(t_f), float(t_h)),
        activity=activity,
        provenance="synthetic",
    )


def generate_cds_mirror(params: GeneratorParams | None = None, seed: int = 0,
                        counts: dict[Activity, int] | None = None) -> list[Episode]:
    """1,375 synthetic episodes with the controlled-study activity counts.

    Episode ``i`` uses its own sub-seed ``(seed, i)``, so any slice can be
    regenerated independently.
    """
    params = params or GeneratorParams()
    counts = CDS_COUNTS if counts is None else counts
    episodes = []
    i = 0
    for act in Activity:
        for _ in range(counts.get(act, 0)):
            rng = np.random.default_rng([seed, i])
            episodes.append(generate_episode(act, params, rng, episode_id=f"syn-{i:05d}"))
            i += 1
    return episodes


# Analytic properties of the target distributions.

def _component_dists(timing: TimingParams) -> list:
    return [
        stats.truncnorm((TARGET_MIN - mu) / sd, (TARGET_MAX - mu) / sd, loc=mu, scale=sd)
        for mu, sd in zip(timing.means, timing.sds)
    ]


def tot_cdf(timing: TimingParams, x: np.ndarray | float) -> np.ndarray:
    """CDF of ``max(t_e, t_f, t_h)`` for independent truncated-normal markers."""
    out = np.ones_like(np.asarray(x, dtype=np.float64))
    for d in _component_dists(timing):
        out = out * d.cdf(x)
    return out


def tot_mean(timing: TimingParams) -> float:
    # E[X] = lo + integral of the survival function over [lo, hi].
    val, _ = integrate.quad(lambda x: 1.0 - tot_cdf(timing, x), TARGET_MIN, TARGET_MAX,
                            limit=200, points=timing.means)
    return TARGET_MIN + val


def tot_mean_abs_dev(timing: TimingParams, center: float | None = None) -> float:
    """``E|TOT - center|``; defaults to the TOT mean (MAE of a mean predictor)."""
    m = tot_mean(timing) if center is None else center
    below, _ = integrate.quad(lambda x: tot_cdf(timing, x), TARGET_MIN, m, limit=200)
    above, _ = integrate.quad(lambda x: 1.0 - tot_cdf(timing, x), m, TARGET_MAX, limit=200)
    return below + above


def noise_floor(params: GeneratorParams, activities: Sequence[Activity]) -> float:
    """TOT MAE of the per-activity mean predictor, weighted by the given activity sample."""
    acts = [Activity.parse(a) for a in activities]
    if not acts:
        raise ConfigError("noise floor needs at least one activity")
    per = {a: tot_mean_abs_dev(params.timing[a]) for a in set(acts)}
    return float(np.mean([per[a] for a in acts]))
