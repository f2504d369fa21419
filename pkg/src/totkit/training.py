"""Mini-batch Adam training of the take-over-time models."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import neural
from .episodes import Episode
from .errors import DataError, ShapeError, TrainingError
from .model import ModelConfig, ModelParams, forward_batch, init_params, loss_and_grads, prepare_inputs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    epochs: int = 10
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: tuple[float, float, float, float]  # e, f, h, TOT


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    initial_val_mae: tuple[float, float, float, float] | None = None

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.epochs]

    @property
    def val_tot_mae(self) -> list[float]:
        return [r.val_mae[3] for r in self.epochs]


def build_windows(config: ModelConfig, episodes: Sequence[Episode]) -> tuple[np.ndarray, np.ndarray]:
    """Stack the TOR-anchored windows ``(N, T, D)`` and targets ``(N, 3)``."""
    if not episodes:
        raise DataError("no episodes")
    T = config.window_frames
    xs, ys = [], []
    for ep in episodes:
        if ep.targets is None:
            raise DataError(f"episode {ep.episode_id} is unlabeled")
        if ep.rate != config.rate:
            raise DataError(f"episode {ep.episode_id} has rate {ep.rate}, model expects {config.rate}")
        xs.append(ep.window(T))
        ys.append(ep.targets)
    return prepare_inputs(config, np.stack(xs)), np.asarray(ys, dtype=np.float64)


def predict(params: ModelParams, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Final-step outputs for many windows, evaluated in chunks."""
    if x.shape[0] == 0:
        return np.zeros((0, 3))
    return np.concatenate([forward_batch(params, x[i:i + chunk])[0] for i in range(0, x.shape[0], chunk)])


def mae_tuple(pred: np.ndarray, targets: np.ndarray) -> tuple[float, float, float, float]:
    comp = np.abs(pred - targets).mean(axis=0)
    tot = np.abs(pred.max(axis=1) - targets.max(axis=1)).mean()
    return (float(comp[0]), float(comp[1]), float(comp[2]), float(tot))


def _val_mae(params: ModelParams, x: np.ndarray, y: np.ndarray, when: str) -> tuple[float, float, float, float]:
    try:
        return mae_tuple(predict(params, x), y)
    except neural.NonFiniteError as exc:
        raise TrainingError(f"validation {when}: {exc}") from exc


def train(config: ModelConfig, train_set: Sequence[Episode], val_set: Sequence[Episode],
          hyper: TrainConfig | None = None, init: ModelParams | None = None) -> tuple[ModelParams, History]:
    """Train with Adam and return the parameters of the best validation-TOT epoch.

    Batches are reshuffled every epoch from ``hyper.seed``; the whole run is
    a deterministic function of its inputs.
    """
    hyper = hyper or TrainConfig()
    x_tr, y_tr = build_windows(config, train_set)
    x_va, y_va = build_windows(config, val_set)
    rng = np.random.default_rng(hyper.seed)
    params = init.copy() if init is not None else init_params(config, rng)
    try:
        params.check(config)
    except ShapeError as exc:
        raise TrainingError(f"initial parameters do not match the config: {exc}") from exc
    state = neural.AdamState(lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.adam_eps)
    history = History(initial_val_mae=_val_mae(params, x_va, y_va, "before training"))
    best = params.copy()
    best_val = np.inf
    named = params.named()
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(x_tr.shape[0])
        total, count = 0.0, 0
        for start in range(0, order.size, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            try:
                loss, grads = loss_and_grads(params, x_tr[idx], y_tr[idx])
            except neural.NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}, batch at {start}: {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch at {start}")
            neural.adam_step(named, grads, state)
            total += loss * idx.size
            count += idx.size
        val = _val_mae(params, x_va, y_va, f"after epoch {epoch}")
        history.epochs.append(EpochRecord(epoch, total / count, val))
        log.info("epoch %d: train loss %.4f, val TOT MAE %.4f", epoch, total / count, val[3])
        if val[3] < best_val:
            best_val = val[3]
            best = params.copy()
            history.best_epoch = epoch
    return best, history
