"""SGD with momentum, per-label balance statistics and prior/depth sweeps."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng
from .bounds import BoundInput, _prior_gaussian, loss_grad_stats, per_w_complexity, prior_draw
from .distributions import Dataset, LabeledMixture, sample_mixture
from .errors import DivergenceError, InvalidInputError
from .models import LossKind, Network, init_weights, loss, loss_and_weight_gradient, mlp_by_depth

DIVERGENCE_LOSS = 1e6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    loss: LossKind = LossKind.NLL

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidInputError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be >= 0")
        object.__setattr__(self, "loss", LossKind.parse(self.loss))


@dataclass(frozen=True)
class LabelBalance:
    per_label_mean: np.ndarray
    across_label_std: float
    mean: float

    @property
    def relative_std(self) -> float:
        return self.across_label_std / self.mean if self.mean else 0.0

    def to_dict(self) -> dict:
        return {
            "per_label_mean": [float(v) for v in self.per_label_mean],
            "across_label_std": self.across_label_std,
            "mean": self.mean,
        }


@dataclass(frozen=True)
class TrainTrace:
    epoch_loss: np.ndarray
    network: Network
    wall_time: float
    balance: LabelBalance | None = None

    @property
    def final_weights(self) -> np.ndarray:
        return self.network.weights


def label_balance(losses: np.ndarray, y: np.ndarray, k: int) -> LabelBalance:
    """Mean loss per label and the (population) standard deviation across labels.

    Labels without samples are skipped.
    """
    means = np.array([losses[y == c].mean() if np.any(y == c) else np.nan for c in range(k)])
    present = means[~np.isnan(means)]
    return LabelBalance(means, float(present.std()), float(present.mean()))


def momentum_step(w: np.ndarray, v: np.ndarray, grad: np.ndarray, lr: float, momentum: float):
    """One classic-momentum update; returns the new ``(w, v)``."""
    v = momentum * v - lr * grad
    return w + v, v


def sgd_train(net: Network, data: Dataset, cfg: TrainConfig, init: bool = False) -> TrainTrace:
    """Mini-batch SGD with classic momentum: ``v <- mu v - eta grad; w <- w + v``.

    Each epoch visits the data in an order drawn from the run seed; the last
    partial batch is kept. With ``init=True`` the starting weights are
    re-drawn from the uniform fan-in initializer first.
    """
    if len(data) == 0:
        raise InvalidInputError("empty training set")
    t0 = time.perf_counter()
    if init:
        net = init_weights(net, rng.generator(cfg.seed, "init"))
    w = net.weights.copy()
    v = np.zeros_like(w)
    n = len(data)
    epoch_loss = []
    for epoch in range(cfg.epochs):
        order = rng.generator(cfg.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch_loss, grad = loss_and_weight_gradient(net, data.X[idx], data.y[idx], cfg.loss, w)
            if not np.isfinite(batch_loss) or batch_loss > DIVERGENCE_LOSS:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, batch {bi} (loss {batch_loss!r})", epoch=epoch, batch=bi
                )
            w, v = momentum_step(w, v, grad, cfg.learning_rate, cfg.momentum)
            total += batch_loss * idx.size
        epoch_loss.append(total / n)
    if not np.all(np.isfinite(w)):
        raise DivergenceError("non-finite weights after training", epoch=cfg.epochs)
    trained = net.with_weights(w)
    losses = loss(trained, data.X, data.y, cfg.loss)
    return TrainTrace(np.array(epoch_loss), trained, time.perf_counter() - t0, label_balance(losses, data.y, net.n_classes))


@dataclass(frozen=True)
class PriorSweepRow:
    prior_var: float
    mean_loss: float
    mean_grad_sq: float


def prior_sweep_stats(
    net: Network,
    prior_vars: Sequence[float],
    dist: LabeledMixture,
    kind=LossKind.NLL,
    n_prior: int = 64,
    n_data: int = 4096,
    seed: int = 0,
) -> list[PriorSweepRow]:
    """``E_D loss`` and ``E_D |grad_x loss|^2`` averaged over ``n_prior`` draws from ``N(0, s I)``.

    Every grid point reuses the same data sample and the same standard-normal
    weight directions, so only the scale changes along the grid.
    """
    if len(prior_vars) == 0:
        raise InvalidInputError("empty prior-variance grid")
    data = sample_mixture(dist, n_data, rng.subseed(seed, "sweep-data"))
    rows = []
    for s in prior_vars:
        if s < 0:
            raise InvalidInputError("prior variances must be non-negative")
        if s == 0:
            stats = [loss_grad_stats(net, np.zeros(net.n_params), data, kind)]
        else:
            prior = _prior_gaussian(float(s), net)
            stats = [loss_grad_stats(net, prior_draw(prior, seed, j), data, kind) for j in range(n_prior)]
        b = np.mean([t[0] for t in stats])
        g = np.mean([t[1] for t in stats])
        rows.append(PriorSweepRow(float(s), float(b), float(g)))
    return rows


@dataclass(frozen=True)
class DepthRow:
    depth: int
    complexity: float
    n_params: int


def depth_sweep_complexity(
    depths: Sequence[int],
    dist: LabeledMixture,
    inp: BoundInput,
    kind=LossKind.NLL,
    build: Callable[[int], Network] | None = None,
    workers: int = 1,
) -> tuple[list[DepthRow], bool]:
    """Prior-expectation complexity per depth, with identical seeds at every depth.

    Returns the rows and whether the sequence is non-increasing in depth.
    """
    if build is None:
        def build(depth):
            return mlp_by_depth(dist.dim, dist.n_classes, depth)

    def one(depth):
        net = build(depth)
        return DepthRow(int(depth), per_w_complexity(net, inp.prior_var, dist, inp, kind).value, net.n_params)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, depths))
    else:
        rows = [one(d) for d in depths]
    values = [r.complexity for r in rows]
    monotone = all(b <= a for a, b in zip(values, values[1:]))
    return rows, monotone


def prior_label_balance(
    net: Network,
    prior_var: float,
    dist: LabeledMixture,
    kind=LossKind.NLL,
    n_prior: int = 64,
    n_data: int = 4096,
    seed: int = 0,
) -> LabelBalance:
    """Per-label mean loss averaged over prior draws, and its spread across labels."""
    data = sample_mixture(dist, n_data, rng.subseed(seed, "balance-data"))
    prior = _prior_gaussian(prior_var, net)
    acc = np.zeros(len(data))
    for j in range(n_prior):
        acc += loss(net.with_weights(prior_draw(prior, seed, j)), data.X, data.y, kind)
    return label_balance(acc / n_prior, data.y, dist.n_classes)
