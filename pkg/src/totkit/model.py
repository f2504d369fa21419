"""Independent-LSTMs take-over-time regressor and single-LSTM baseline.

Each input frame goes through a shared FC+tanh embedding. The ``id-lstms``
architecture then runs three LSTM cells (eyes, foot, hands) side by side and
maps each branch's hidden state through the same FC+softplus head to one
time. The ``single-lstm`` baseline runs one cell and a three-row head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import neural
from .errors import ConfigError, ShapeError
from .features import FIELD_SLICES, FeatureMask, mask_indices

ARCHITECTURES = ("id-lstms", "single-lstm")
COMPONENTS = ("e", "f", "h")
PARAM_NAMES = ("w_in", "b_in", "w_x", "w_h", "b", "w_out", "b_out")


@dataclass(frozen=True)
class ModelConfig:
    mask: FeatureMask = field(default_factory=FeatureMask.full)
    embed_dim: int = 64
    hidden_dim: int = 64
    window_seconds: float = 2.0
    rate: float = 15.0
    architecture: str = "id-lstms"
    # Optional affine normalization of the two stereo distances: (x - offset) * scale.
    stereo_offset: float = 0.0
    stereo_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.mask.is_empty():
            raise ConfigError("model needs at least one feature family")
        if self.embed_dim <= 0 or self.hidden_dim <= 0 or self.rate <= 0:
            raise ConfigError("embed_dim, hidden_dim and rate must be positive")
        if self.window_frames < 2:
            raise ConfigError(f"window of {self.window_seconds} s at {self.rate} Hz is under 2 frames")

    @property
    def window_frames(self) -> int:
        return int(round(self.window_seconds * self.rate))

    @property
    def input_dim(self) -> int:
        return self.mask.dim

    @property
    def n_branches(self) -> int:
        return 3 if self.architecture == "id-lstms" else 1

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["mask"] = self.mask.code
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        d["mask"] = FeatureMask.parse(d["mask"])
        return cls(**d)


@dataclass
class ModelParams:
    """All trainable arrays; LSTM weights are stacked along a branch axis."""

    w_in: np.ndarray  # (E, D)
    b_in: np.ndarray  # (E,)
    w_x: np.ndarray  # (K, 4H, E)
    w_h: np.ndarray  # (K, 4H, H)
    b: np.ndarray  # (K, 4H)
    w_out: np.ndarray  # (M, H), M = 1 for id-lstms and 3 for single-lstm
    b_out: np.ndarray  # (M,)

    def named(self) -> dict[str, np.ndarray]:
        """Live views keyed by canonical name; in-place edits update the model."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.named().items()})

    def branch(self, k: int) -> neural.LstmCellParams:
        return neural.LstmCellParams(self.w_x[k], self.w_h[k], self.b[k])

    def n_params(self) -> int:
        return sum(v.size for v in self.named().values())

    def check(self, config: ModelConfig) -> None:
        E, H, K, D = config.embed_dim, config.hidden_dim, config.n_branches, config.input_dim
        M = 1 if config.architecture == "id-lstms" else 3
        expected = {
            "w_in": (E, D), "b_in": (E,), "w_x": (K, 4 * H, E), "w_h": (K, 4 * H, H),
            "b": (K, 4 * H), "w_out": (M, H), "b_out": (M,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")


def init_params(config: ModelConfig, rng: np.random.Generator | int) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(rng)
    E, H, D = config.embed_dim, config.hidden_dim, config.input_dim
    cells = [neural.LstmCellParams.init(E, H, rng) for _ in range(config.n_branches)]
    M = 1 if config.architecture == "id-lstms" else 3
    return ModelParams(
        w_in=neural.uniform_init(rng, (E, D), D),
        b_in=np.zeros(E),
        w_x=np.stack([c.w_x for c in cells]),
        w_h=np.stack([c.w_h for c in cells]),
        b=np.stack([c.b for c in cells]),
        w_out=neural.uniform_init(rng, (M, H), H),
        b_out=np.zeros(M),
    )


def zero_params(config: ModelConfig) -> ModelParams:
    """All-zero parameters (test fixture: every output is ln 2)."""
    p = init_params(config, 0)
    for v in p.named().values():
        v[...] = 0.0
    return p


def prepare_inputs(config: ModelConfig, features: np.ndarray) -> np.ndarray:
    """Select masked columns of full 41-dim frames and normalize stereo."""
    features = np.asarray(features, dtype=np.float64)
    # C order keeps BLAS summation order identical across callers.
    out = np.ascontiguousarray(features[..., mask_indices(config.mask)])
    if config.mask.stereo and (config.stereo_offset != 0.0 or config.stereo_scale != 1.0):
        cols = _stereo_columns(config.mask)
        out[..., cols] = (out[..., cols] - config.stereo_offset) * config.stereo_scale
    return out


def _stereo_columns(mask: FeatureMask) -> np.ndarray:
    idx = mask_indices(mask)
    s = FIELD_SLICES["stereo"]
    return np.flatnonzero((idx >= s.start) & (idx < s.stop))


@dataclass
class ForwardCache:
    x: np.ndarray
    a_in: np.ndarray
    emb: np.ndarray
    lstm: neural.LstmCache
    h_last: np.ndarray  # (K, N, H)
    z_out: np.ndarray  # (K, N, M)


def _head(params: ModelParams, hs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = hs @ params.w_out.T + params.b_out
    return z, neural.softplus(z)


def _to_triples(y: np.ndarray) -> np.ndarray:
    # (K, ..., M) -> (..., 3) for either architecture (K*M == 3).
    if y.shape[0] == 3:
        return np.moveaxis(y[..., 0], 0, -1)
    return y[0]


def forward_batch(params: ModelParams, x: np.ndarray, keep_cache: bool = False,
                  per_step: bool = False) -> tuple[np.ndarray, ForwardCache | None]:
    """Forward a batch of windows ``x`` of shape ``(N, T, D)``.

    Returns ``(N, 3)`` outputs ``(o_e, o_f, o_h)``, or ``(N, T, 3)`` when
    ``per_step`` is set, plus the cache for :func:`loss_and_grads`.
    """
    if x.ndim != 3 or x.shape[-1] != params.w_in.shape[1]:
        raise ShapeError(f"expected windows (N, T, {params.w_in.shape[1]}), got {x.shape}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    neural.check_finite("model input", x)
    a_in = x @ params.w_in.T + params.b_in
    emb = np.tanh(a_in)
    hs, lcache = neural.lstm_forward(emb, params.w_x, params.w_h, params.b, keep_cache=keep_cache)
    if per_step:
        _, y = _head(params, hs)
        return _to_triples(y), None
    h_last = hs[:, :, -1]
    z, y = _head(params, h_last)
    out = _to_triples(y)
    neural.check_finite("model output", out)
    cache = ForwardCache(x, a_in, emb, lcache, h_last, z) if keep_cache else None
    return out, cache


def forward_window(params: ModelParams, window: np.ndarray, per_step: bool = False) -> np.ndarray:
    """Outputs for a single ``(T, D)`` window: shape ``(3,)`` or ``(T, 3)``."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ShapeError(f"expected a (T, D) window, got {window.shape}")
    out, _ = forward_batch(params, window[None], per_step=per_step)
    return out[0]


def tot_loss(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Sum over e/f/h of the batch-mean absolute error."""
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if outputs.shape != targets.shape or outputs.ndim != 2 or outputs.shape[1] != 3:
        raise ShapeError(f"outputs {outputs.shape} and targets {targets.shape} must both be (N, 3)")
    if outputs.shape[0] == 0:
        raise ShapeError("empty batch")
    return float(np.abs(targets - outputs).mean(axis=0).sum())


def loss_and_grads(params: ModelParams, x: np.ndarray,
                   targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """L1 loss and its exact reverse-mode gradient for every parameter.

    The L1 subgradient at zero residual is taken as 0.
    """
    out, cache = forward_batch(params, x, keep_cache=True)
    loss = tot_loss(out, targets)
    grads = backward(params, cache, np.sign(out - targets) / out.shape[0])
    return loss, grads


def backward(params: ModelParams, cache: ForwardCache, d_out: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse pass given ``d_out = dL/d(o_e, o_f, o_h)`` of shape ``(N, 3)``."""
    K = params.w_x.shape[0]
    if K == 3:
        dy = np.moveaxis(d_out, -1, 0)[..., None]  # (3, N, 1)
    else:
        dy = d_out[None]  # (1, N, 3)
    dz = dy * neural.sigmoid(cache.z_out)
    dz2 = dz.reshape(-1, dz.shape[-1])
    grads = {
        "w_out": dz2.T @ cache.h_last.reshape(-1, cache.h_last.shape[-1]),
        "b_out": dz2.sum(axis=0),
    }
    dh_last = dz @ params.w_out  # (K, N, H)
    K_, N, T, H = cache.lstm.tanh_c.shape
    dh_seq = np.zeros((K_, N, T, H))
    dh_seq[:, :, -1] = dh_last
    lgrads, d_emb = neural.lstm_backward(dh_seq, cache.lstm, params.w_x, params.w_h)
    grads.update(lgrads)
    d_a = d_emb * (1.0 - cache.emb * cache.emb)
    d_a2 = d_a.reshape(-1, d_a.shape[-1])
    grads["w_in"] = d_a2.T @ cache.x.reshape(-1, cache.x.shape[-1])
    grads["b_in"] = d_a2.sum(axis=0)
    bptt = {name: grads[name] for name in PARAM_NAMES}
    neural.check_finite("gradients", *bptt.values())
    return bptt


bptt_gradients = loss_and_grads


def gradient_check(params: ModelParams, x: np.ndarray, targets: np.ndarray, eps: float = 1e-5,
                   n_samples: int | None = 60, seed: int = 0) -> float:
    """Max relative error between BPTT and central differences on one batch.

    Samples whose residual on any component is within ``10 * eps`` of the L1
    kink are dropped first. On the remaining kink-free region the loss is
    ``sum(sign * o) / N`` plus a constant, so the oracle differences the
    per-output terms instead of the rounded scalar loss.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params = params.copy()
    out, _ = forward_batch(params, x)
    keep = np.all(np.abs(out - targets) >= 10 * eps, axis=1)
    if not keep.any():
        raise ConfigError("every sample lies at an L1 kink")
    x, targets = x[keep], targets[keep]
    _, grads = loss_and_grads(params, x, targets)
    signs = np.sign(out[keep] - targets) / x.shape[0]

    def loss_terms() -> np.ndarray:
        return signs * forward_batch(params, x)[0]

    return neural.finite_diff_check(loss_terms, params.named(), grads, eps=eps, n_samples=n_samples,
                                    rng=np.random.default_rng(seed))


def with_mask(config: ModelConfig, mask: FeatureMask) -> ModelConfig:
    return replace(config, mask=mask)
