"""Small float64 numerical engine: dense layers, LSTM cells, BPTT and Adam.

Gate layout for every LSTM weight block is ``[i, f, g, o]`` along the first
axis of size ``4 * hidden``. Sequence routines accept a leading *branch* axis
so that several independent cells of identical shape can be evaluated with
one batched matmul; branch ``k`` only ever reads slice ``k`` of the weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NonFiniteError, ShapeError

ACTIVATIONS = ("identity", "tanh", "relu", "softplus")


sigmoid = expit


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "tanh":
        return np.tanh(z)
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softplus":
        return softplus(z)
    raise ConfigError(f"unknown activation {activation!r}")


def activation_grad(z: np.ndarray, y: np.ndarray, activation: str) -> np.ndarray:
    """d act(z) / dz, given pre-activation ``z`` and output ``y``."""
    if activation == "identity":
        return np.ones_like(z)
    if activation == "tanh":
        return 1.0 - y * y
    if activation == "relu":
        return (z > 0).astype(z.dtype)
    if activation == "softplus":
        return sigmoid(z)
    raise ConfigError(f"unknown activation {activation!r}")


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite values in {name}")


def fc_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray, activation: str = "identity") -> np.ndarray:
    """``act(W @ x + b)`` for a vector or a batch of row vectors ``x[..., in]``."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"fc shapes disagree: x{x.shape}, W{W.shape}, b{b.shape}")
    check_finite("fc input", x)
    return activate(x @ W.T + b, activation)


def fc_backward(x: np.ndarray, z: np.ndarray, y: np.ndarray, W: np.ndarray, dy: np.ndarray,
                activation: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(dW, db, dx)`` of an FC layer, summed over all leading axes."""
    dz = dy * activation_grad(z, y, activation)
    dz2 = dz.reshape(-1, dz.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    dW = dz2.T @ x2
    db = dz2.sum(axis=0)
    dx = dz @ W
    return dW, db, dx


@dataclass
class LstmCellParams:
    """Weights of one single-layer, no-peephole LSTM cell."""

    w_x: np.ndarray  # (4H, D)
    w_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self) -> None:
        four_h = self.w_h.shape[0]
        if (four_h % 4 or self.w_h.shape != (four_h, four_h // 4)
                or self.w_x.ndim != 2 or self.w_x.shape[0] != four_h or self.b.shape != (four_h,)):
            raise ShapeError(f"inconsistent LSTM shapes w_x{self.w_x.shape} w_h{self.w_h.shape} b{self.b.shape}")

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[1]

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
             forget_bias: float = 1.0) -> "LstmCellParams":
        w_x = uniform_init(rng, (4 * hidden_dim, input_dim), input_dim)
        w_h = uniform_init(rng, (4 * hidden_dim, hidden_dim), hidden_dim)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = forget_bias
        return cls(w_x, w_h, b)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _gates(z: np.ndarray, H: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    return i, f, g, o


def lstm_step(x: np.ndarray, h: np.ndarray, c: np.ndarray,
              params: LstmCellParams) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM update ``(h, c) -> (h', c')`` for a vector or batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    H = params.hidden_dim
    if x.shape[-1] != params.input_dim or h.shape[-1] != H or c.shape != h.shape:
        raise ShapeError(f"lstm_step shapes disagree: x{x.shape} h{h.shape} c{c.shape} "
                         f"for cell ({params.input_dim} -> {H})")
    z = x @ params.w_x.T + h @ params.w_h.T + params.b
    i, f, g, o = _gates(z, H)
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    check_finite("lstm_step output", h_new, c_new)
    return h_new, c_new


@dataclass
class LstmCache:
    """Activations kept by :func:`lstm_forward` for the backward pass."""

    xs: np.ndarray
    hs: np.ndarray  # (K, N, T+1, H), hs[:, :, 0] is the initial zero state
    cs: np.ndarray
    gates: np.ndarray  # (K, N, T, 4H) post-nonlinearity i, f, g, o
    tanh_c: np.ndarray  # (K, N, T, H)
    shared_input: bool


def lstm_forward(xs: np.ndarray, w_x: np.ndarray, w_h: np.ndarray, b: np.ndarray,
                 keep_cache: bool = True) -> tuple[np.ndarray, LstmCache | None]:
    """Run ``K`` stacked LSTM cells over a batch of sequences from a zero state.

    Args:
        xs: ``(N, T, D)`` inputs shared by all branches, or ``(K, N, T, D)``.
        w_x, w_h, b: stacked weights ``(K, 4H, D)``, ``(K, 4H, H)``, ``(K, 4H)``.

    Returns:
        Hidden states ``(K, N, T, H)`` and the cache (``None`` unless requested).
    """
    K, four_h, D = w_x.shape
    H = four_h // 4
    if w_h.shape != (K, four_h, H) or b.shape != (K, four_h) or xs.shape[-1] != D:
        raise ShapeError(f"lstm_forward shapes disagree: xs{xs.shape} w_x{w_x.shape} "
                         f"w_h{w_h.shape} b{b.shape}")
    shared = xs.ndim == 3
    if not shared and xs.shape[0] != K:
        raise ShapeError(f"xs has {xs.shape[0]} branches, weights have {K}")
    N, T = xs.shape[-3], xs.shape[-2]
    # Input projections for every timestep at once: (K, N, T, 4H).
    zx = np.matmul(xs[None] if shared else xs, np.swapaxes(w_x, 1, 2)[:, None]) + b[:, None, None, :]
    w_hT = np.swapaxes(w_h, 1, 2)  # (K, H, 4H)
    hs = np.zeros((K, N, T + 1, H))
    cs = np.zeros((K, N, T + 1, H))
    gates = np.empty((K, N, T, four_h)) if keep_cache else None
    tanh_c = np.empty((K, N, T, H)) if keep_cache else None
    h = hs[:, :, 0]
    c = cs[:, :, 0]
    for t in range(T):
        z = zx[:, :, t] + np.matmul(h, w_hT)
        i, f, g, o = _gates(z, H)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, :, t + 1] = h
        cs[:, :, t + 1] = c
        if keep_cache:
            gates[:, :, t, :H] = i
            gates[:, :, t, H:2 * H] = f
            gates[:, :, t, 2 * H:3 * H] = g
            gates[:, :, t, 3 * H:] = o
            tanh_c[:, :, t] = tc
    check_finite("lstm hidden states", hs)
    out = hs[:, :, 1:]
    if not keep_cache:
        return out, None
    return out, LstmCache(xs, hs, cs, gates, tanh_c, shared)


def lstm_backward(dh_seq: np.ndarray, cache: LstmCache, w_x: np.ndarray,
                  w_h: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagation through time for :func:`lstm_forward`.

    Args:
        dh_seq: ``(K, N, T, H)`` loss gradient w.r.t. each emitted hidden state
            (zeros where a timestep does not feed the loss).

    Returns:
        ``({"w_x", "w_h", "b"}, dxs)``; ``dxs`` matches the shape of the
        forward inputs, summed over branches when the input was shared.
    """
    if cache is None:
        raise ValueError("lstm_backward needs the cache from a forward pass with keep_cache=True")
    K, N, T, H = dh_seq.shape
    g_all = cache.gates
    dz = np.empty((K, N, T, 4 * H))
    dh_next = np.zeros((K, N, H))
    dc_next = np.zeros((K, N, H))
    for t in range(T - 1, -1, -1):
        i = g_all[:, :, t, :H]
        f = g_all[:, :, t, H:2 * H]
        g = g_all[:, :, t, 2 * H:3 * H]
        o = g_all[:, :, t, 3 * H:]
        tc = cache.tanh_c[:, :, t]
        c_prev = cache.cs[:, :, t]
        dh = dh_seq[:, :, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[:, :, t, :H] = dc * g * i * (1.0 - i)
        dz[:, :, t, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, :, t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, :, t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = np.matmul(dz[:, :, t], w_h)
    h_prev = cache.hs[:, :, :T]  # (K, N, T, H)
    dz2 = dz.reshape(K, N * T, 4 * H)
    grads = {
        "w_h": np.matmul(np.swapaxes(dz2, 1, 2), h_prev.reshape(K, N * T, H)),
        "b": dz2.sum(axis=1),
    }
    if cache.shared_input:
        D = cache.xs.shape[-1]
        x2 = cache.xs.reshape(N * T, D)
        grads["w_x"] = np.matmul(np.swapaxes(dz2, 1, 2), x2[None])
        dxs = np.matmul(dz, w_x[:, None]).sum(axis=0)
    else:
        D = cache.xs.shape[-1]
        grads["w_x"] = np.matmul(np.swapaxes(dz2, 1, 2), cache.xs.reshape(K, N * T, D))
        dxs = np.matmul(dz, w_x[:, None])
    check_finite("lstm gradients", grads["w_x"], grads["w_h"], grads["b"])
    return grads, dxs


@dataclass
class AdamState:
    """Adam hyperparameters, moment estimates and step counter."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if set(params) != set(grads):
        raise ShapeError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {grads[name].shape}, expected {p.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_diff_check(loss_fn: Callable[[], float | np.ndarray], params: Mapping[str, np.ndarray],
                      grads: Mapping[str, np.ndarray], eps: float = 1e-5,
                      n_samples: int | None = 200, rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must read the (mutable) arrays in ``params``; entries are
    perturbed in place and restored. It may return the scalar loss or an
    array of additive loss terms; with terms, the difference is accumulated
    term by term, which avoids cancellation against large constant parts.
    ``n_samples`` entries are drawn per parameter array (all when ``None``).

    Returns:
        Maximum relative error ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for name, p in params.items():
        if not p.flags.c_contiguous:
            raise ShapeError(f"{name} must be C-contiguous to be perturbed in place")
        flat = p.reshape(-1)
        if n_samples is None or n_samples >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        g = grads[name].reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            up = np.asarray(loss_fn(), dtype=np.float64)
            flat[j] = orig - eps
            down = np.asarray(loss_fn(), dtype=np.float64)
            flat[j] = orig
            numeric = float(np.sum(up - down)) / (2 * eps)
            worst = max(worst, relative_error(float(g[j]), numeric))
    return worst
