"""Functional entropy, moment generating functions, the Herbst integral identity,
and numerical checks of the Gaussian and Rademacher log-Sobolev inequalities.

Monte Carlo estimators here report delta-method (infinitesimal jackknife)
standard errors. Checks that compare two estimates draw both from one sample
set, so the standard error of their difference is computed from the
per-sample influence values of the difference rather than by adding
variances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .distributions import (
    DiagonalGaussian,
    Dataset,
    LabeledMixture,
    sample_component,
    sample_gaussian,
    sample_mixture,
)
from .errors import EvaluationError, InvalidInputError, SizeLimitError

MAX_RADEMACHER_DIM = 20
WEIGHT_TOL = 1e-9

SampleFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    std_error: float
    n_samples: int


@dataclass(frozen=True)
class MgfCurve:
    alphas: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray


@dataclass(frozen=True)
class HerbstCheck:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    diff_se: float
    grid: np.ndarray = field(repr=False)

    @property
    def gap(self) -> float:
        return self.lhs - self.rhs


@dataclass(frozen=True)
class LsiGap:
    lhs: float
    rhs: float
    lhs_se: float = 0.0
    rhs_se: float = 0.0
    diff_se: float = 0.0

    @property
    def gap(self) -> float:
        return self.rhs - self.lhs


@dataclass(frozen=True)
class DecompositionCheck:
    total: float
    within_sum: float
    between: float
    total_se: float = 0.0
    parts_se: float = 0.0
    exact: bool = False

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.total_se, self.parts_se))

    @property
    def discrepancy(self) -> float:
        return self.total - (self.within_sum + self.between)


def _se(influence: np.ndarray) -> float:
    n = influence.shape[0]
    if n < 2:
        return 0.0
    return float(np.std(influence, ddof=1) / np.sqrt(n))


def _evaluate(f: SampleFn, data: Dataset, nonneg: bool = True, what: str = "function") -> np.ndarray:
    vals = np.asarray(f(data.X, data.y), dtype=float).reshape(-1)
    if vals.shape[0] != len(data):
        raise EvaluationError(f"{what} returned {vals.shape[0]} values for {len(data)} samples")
    bad = ~np.isfinite(vals)
    if nonneg:
        bad |= vals < 0
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(
            f"{what} returned {vals[i]!r} at sample {i}", sample=next(iter(data[i : i + 1]))
        )
    return vals


def functional_entropy(values: Sequence[float], weights: Sequence[float]) -> float:
    """``E[F log F] - E[F] log E[F]`` for a finite distribution, with ``0 log 0 = 0``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if v.shape != w.shape:
        raise InvalidInputError(f"{v.size} values but {w.size} weights")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise InvalidInputError("values must be finite and non-negative")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise InvalidInputError("weights must be a probability vector")
    support = v[w > 0]
    if support.size == 0 or np.all(support == support[0]):
        return 0.0
    mean = float(np.dot(w, v))
    r = v / mean
    return max(mean * float(np.dot(w, xlogy(r, r))), 0.0)


def _entropy_from_values(F: np.ndarray) -> tuple[float, np.ndarray]:
    """Plug-in entropy and its per-sample influence values."""
    if np.all(F == F[0]):
        return 0.0, np.zeros_like(F)
    M = F.mean()
    r = F / M
    rlogr = xlogy(r, r)
    H = rlogr.mean()
    return float(M * H), M * (rlogr - H - (r - 1.0))


def entropy_estimate(values: np.ndarray) -> EntropyEstimate:
    F = np.asarray(values, dtype=float).reshape(-1)
    if F.size < 2:
        raise InvalidInputError("need at least two samples")
    if np.any(F < 0) or not np.all(np.isfinite(F)):
        raise EvaluationError("entropy requires finite non-negative values")
    value, infl = _entropy_from_values(F)
    return EntropyEstimate(value, _se(infl), F.size)


def functional_entropy_mc(f: SampleFn, dist: LabeledMixture, n: int, seed: int) -> EntropyEstimate:
    """Monte Carlo ``Ent_D[f]`` with ``f(X, y) >= 0`` vectorized over samples."""
    if n < 2:
        raise InvalidInputError("n must be >= 2")
    data = sample_mixture(dist, n, seed)
    return entropy_estimate(_evaluate(f, data))


def mgf_curve(loss: SampleFn, dist: LabeledMixture, alphas: Sequence[float], n: int, seed: int) -> MgfCurve:
    """``M(alpha) = E_D exp(-alpha * loss)`` on a grid of alphas."""
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or a.size == 0 or np.any(a < 0) or np.any(np.diff(a) <= 0):
        raise InvalidInputError("alphas must be a strictly increasing non-negative grid")
    losses = _evaluate(loss, sample_mixture(dist, n, seed), what="loss")
    E = np.exp(-np.outer(a, losses))
    return MgfCurve(a, E.mean(axis=1), E.std(axis=1, ddof=1) / np.sqrt(losses.size) if n > 1 else np.zeros_like(a))


def herbst_grid(upper: float, n_points: int = 64) -> np.ndarray:
    """0, then a geometric run up to ``upper/10``, then a uniform run to ``upper``."""
    if n_points < 4:
        raise InvalidInputError("grid needs at least 4 points")
    if upper <= 0:
        raise InvalidInputError("upper limit must be positive")
    n_geo = n_points // 4
    geo = upper * np.geomspace(1e-3, 0.1, n_geo, endpoint=False)
    uni = np.linspace(0.1 * upper, upper, n_points - 1 - n_geo)
    return np.concatenate([[0.0], geo, uni])


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    dx = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def _lhs_from_losses(losses: np.ndarray, lam: float, m: int) -> tuple[float, np.ndarray]:
    shift = losses.min()
    centered = losses - shift
    alpha = lam / m
    e = np.exp(-alpha * centered)
    M = e.mean()
    value = lam * centered.mean() + m * np.log(M)
    infl = lam * (centered - centered.mean()) + m * (e / M - 1.0)
    return float(value), infl


def _rhs_from_losses(losses: np.ndarray, lam: float, grid: np.ndarray) -> tuple[float, np.ndarray]:
    centered = losses - losses.min()
    weights = _trapezoid_weights(grid)
    total = 0.0
    infl = np.zeros_like(losses)
    if np.all(centered == 0):
        return 0.0, infl
    for alpha, w in zip(grid, weights):
        if alpha == 0.0:
            dev = centered - centered.mean()
            var = np.mean(dev**2)
            val, iv = var / 2, (dev**2 - var) / 2
        else:
            logF = -alpha * centered
            r = np.exp(logF - logsumexp(logF) + np.log(logF.size))
            rlogr = xlogy(r, r)
            H = rlogr.mean()
            val = H / alpha**2
            iv = (rlogr - H - (1.0 + H) * (r - 1.0)) / alpha**2
        total += w * val
        infl += w * iv
    return float(lam * total), lam * infl


def _check_lam(lam: float, m: int) -> None:
    if not lam > 0:
        raise InvalidInputError("lambda must be positive")
    if m < 1:
        raise InvalidInputError("m must be >= 1")


def _check_grid(grid: np.ndarray, upper: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InvalidInputError("quadrature grid needs at least 2 points")
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or not np.isclose(grid[-1], upper, rtol=1e-12, atol=0):
        raise InvalidInputError(f"grid must increase from 0 to lambda/m = {upper!r}")
    return grid


def herbst_lhs(loss: SampleFn, dist: LabeledMixture, lam: float, m: int, n: int, seed: int) -> float:
    """``log E_S exp(lam (L_D - L_S))`` via ``lam * L_D + m * log M(lam/m)``."""
    _check_lam(lam, m)
    losses = _evaluate(loss, sample_mixture(dist, n, seed), what="loss")
    return _lhs_from_losses(losses, lam, m)[0]


def herbst_rhs(
    loss: SampleFn,
    dist: LabeledMixture,
    lam: float,
    m: int,
    alpha_grid: Sequence[float] | None,
    n: int,
    seed: int,
) -> float:
    """``lam * int_0^{lam/m} Ent[e^{-a l}] / (a^2 E[e^{-a l}]) da`` by trapezoid quadrature.

    The integrand at ``a = 0`` is replaced by its limit ``Var(l)/2``.
    """
    _check_lam(lam, m)
    grid = herbst_grid(lam / m) if alpha_grid is None else _check_grid(alpha_grid, lam / m)
    losses = _evaluate(loss, sample_mixture(dist, n, seed), what="loss")
    return _rhs_from_losses(losses, lam, grid)[0]


def herbst_check(
    loss: SampleFn,
    dist: LabeledMixture,
    lam: float,
    m: int,
    n: int,
    seed: int,
    alpha_grid: Sequence[float] | None = None,
) -> HerbstCheck:
    """Both sides of the Herbst identity from one common sample set."""
    _check_lam(lam, m)
    grid = herbst_grid(lam / m) if alpha_grid is None else _check_grid(alpha_grid, lam / m)
    losses = _evaluate(loss, sample_mixture(dist, n, seed), what="loss")
    lhs, il = _lhs_from_losses(losses, lam, m)
    rhs, ir = _rhs_from_losses(losses, lam, grid)
    return HerbstCheck(lhs, rhs, _se(il), _se(ir), _se(il - ir), grid)


def _fd_spot_check(f, grad_f, Z: np.ndarray, n_points: int = 4, tol: float = 1e-3) -> None:
    pts = Z[:n_points]
    g = np.asarray(grad_f(pts), dtype=float)
    d = pts.shape[1]
    for j in range(min(d, 32)):
        h = 1e-5 * np.maximum(1.0, np.abs(pts[:, j]))
        up, dn = pts.copy(), pts.copy()
        up[:, j] += h
        dn[:, j] -= h
        fd = (np.asarray(f(up)) - np.asarray(f(dn))) / (2 * h)
        scale = np.maximum(1.0, np.abs(g[:, j]))
        if np.any(np.abs(fd - g[:, j]) > tol * scale):
            raise InvalidInputError(f"grad_f disagrees with finite differences in coordinate {j}")


def gaussian_lsi_gap(
    f: Callable[[np.ndarray], np.ndarray],
    grad_f: Callable[[np.ndarray], np.ndarray],
    g: DiagonalGaussian,
    n: int,
    seed: int,
) -> LsiGap:
    """Monte Carlo estimates of ``Ent[e^f]`` and ``1/2 E[|sigma * grad f|^2 e^f]`` under ``g``."""
    Z = sample_gaussian(g, n, seed)
    _fd_spot_check(f, grad_f, Z)
    logF = np.asarray(f(Z), dtype=float).reshape(-1)
    G = np.sum((g.std * np.asarray(grad_f(Z), dtype=float).reshape(Z.shape)) ** 2, axis=1)
    if not (np.all(np.isfinite(logF)) and np.all(np.isfinite(G))):
        raise EvaluationError("non-finite value of f or its gradient")
    s = logF.max()
    Ft = np.exp(logF - s)
    lhs_t, il = _entropy_from_values(Ft)
    GF = G * Ft
    rhs_t = 0.5 * GF.mean()
    ir = 0.5 * (GF - GF.mean())
    scale = np.exp(s)
    if not np.isfinite(scale):
        raise EvaluationError("e^f overflows")
    return LsiGap(lhs_t * scale, rhs_t * scale, _se(il) * scale, _se(ir) * scale, _se(il - ir) * scale)


def rademacher_cube(d: int) -> np.ndarray:
    """All ``2^d`` points of ``{-1,+1}^d``; coordinate ``i`` of row ``idx`` is bit ``i`` of ``idx``."""
    idx = np.arange(2**d)
    bits = (idx[:, None] >> np.arange(d)) & 1
    return (2 * bits - 1).astype(float)


def rademacher_lsi_gap(f, d: int | None = None) -> LsiGap:
    """Exact ``Ent[e^f]`` and ``1/2 E[sum_i (grad_i f)^2 e^f]`` on the uniform cube.

    ``grad_i f(z) = (f(z) - f(z with coordinate i flipped)) / 2``. ``f`` is
    either a callable on the ``(2^d, d)`` cube array or the table of its
    ``2^d`` values in :func:`rademacher_cube` order.
    """
    if callable(f):
        if d is None:
            raise InvalidInputError("d is required when f is callable")
        if d > MAX_RADEMACHER_DIM:
            raise SizeLimitError(f"d={d} exceeds the enumeration limit {MAX_RADEMACHER_DIM}")
        vals = np.asarray(f(rademacher_cube(d)), dtype=float).reshape(-1)
    else:
        vals = np.asarray(f, dtype=float).reshape(-1)
        d_table = int(round(np.log2(vals.size))) if vals.size else -1
        if d_table < 0 or 2**d_table != vals.size:
            raise InvalidInputError("table length must be a power of two")
        if d is not None and d != d_table:
            raise InvalidInputError(f"table has 2^{d_table} entries, expected 2^{d}")
        d = d_table
        if d > MAX_RADEMACHER_DIM:
            raise SizeLimitError(f"d={d} exceeds the enumeration limit {MAX_RADEMACHER_DIM}")
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("f has non-finite values")
    idx = np.arange(vals.size)
    s = vals.max()
    Ft = np.exp(vals - s)
    sq = np.zeros_like(vals)
    for i in range(d):
        sq += ((vals - vals[idx ^ (1 << i)]) / 2) ** 2
    w = np.full(vals.size, 1.0 / vals.size)
    lhs = functional_entropy(Ft, w) * np.exp(s)
    rhs = 0.5 * float(np.mean(sq * Ft)) * np.exp(s)
    return LsiGap(lhs, rhs)


def entropy_decomposition_exact(
    values: Sequence[Sequence[float]],
    atom_weights: Sequence[Sequence[float]],
    label_marginals: Sequence[float],
) -> DecompositionCheck:
    """Mixture entropy decomposition for components that are finite discrete laws.

    ``values[y][j]`` is ``f`` at atom ``j`` of label ``y``, which has weight
    ``atom_weights[y][j]`` within its component.
    """
    D = np.asarray(label_marginals, dtype=float)
    if len(values) != D.size or len(atom_weights) != D.size:
        raise InvalidInputError("one value and weight vector per label required")
    vals = [np.asarray(v, dtype=float).reshape(-1) for v in values]
    wts = [np.asarray(w, dtype=float).reshape(-1) for w in atom_weights]
    joint_v = np.concatenate(vals)
    joint_w = np.concatenate([Dy * w for Dy, w in zip(D, wts)])
    total = functional_entropy(joint_v, joint_w)
    within = sum(Dy * functional_entropy(v, w) for Dy, v, w in zip(D, vals, wts))
    g = np.array([np.dot(v, w) for v, w in zip(vals, wts)])
    between = functional_entropy(g, D)
    return DecompositionCheck(total, float(within), between, exact=True)


def entropy_decomposition_check(f: SampleFn, mix: LabeledMixture, n: int, seed: int) -> DecompositionCheck:
    """``Ent_D[f]`` against ``sum_y D_y Ent_{N_y}[f] + Ent_{D_y}[E_{N_y} f]``.

    Point-mass mixtures are evaluated exactly. Otherwise the total comes from a
    pooled mixture sample and the two parts from independent per-label
    stratified samples of size about ``n * D_y``.
    """
    D = mix.label_marginals
    if mix.is_point_mass():
        vals = [
            _evaluate(f, Dataset(c.mean[None, :], np.array([y]))) for y, c in enumerate(mix.components)
        ]
        return entropy_decomposition_exact(vals, [np.ones(1)] * mix.n_classes, D)
    total = entropy_estimate(_evaluate(f, sample_mixture(mix, n, seed)))
    ents, means, per_label = [], [], []
    for y in range(mix.n_classes):
        if D[y] == 0:
            ents.append(0.0)
            means.append(0.0)
            per_label.append(None)
            continue
        ny = max(2, int(round(n * D[y])))
        X = sample_component(mix, y, ny, seed)
        F = _evaluate(f, Dataset(X, np.full(ny, y)))
        ents.append(_entropy_from_values(F)[0])
        means.append(F.mean())
        per_label.append(F)
    means = np.array(means)
    within = float(np.dot(D, ents))
    between = functional_entropy(means, D)
    Mbar = float(np.dot(D, means))
    var = 0.0
    if Mbar > 0:
        for y, F in enumerate(per_label):
            if F is None:
                continue
            flogf = xlogy(F, F)
            iv = D[y] * ((flogf - flogf.mean()) - (np.log(Mbar) + 1.0) * (F - F.mean()))
            var += _se(iv) ** 2
    return DecompositionCheck(total.value, within, between, total.std_error, float(np.sqrt(var)))
