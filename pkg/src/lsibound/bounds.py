"""Complexity-term calculators and assembly of the PAC-Bayes right-hand side

    E_q L_D <= E_q L_S + (C(lam, p) + KL(q || p) + log(1/delta)) / lam.

Three upper bounds on C(lam, p) are provided: the linear-model constant
``k d log sqrt(4/3)``, the global on-average form ``lam^2 e^b g sigma_y^2 / 2m``
and the prior-expectation form estimated by Monte Carlo over prior draws.
The bounded-loss baseline ``lam^2 B^2 / 2m`` is included for comparison.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.special import logsumexp

from . import rng
from .distributions import Dataset, DiagonalGaussian, LabeledMixture, sample_mixture
from .errors import ConstraintViolation, DivergenceError, InvalidInputError
from .models import LossKind, Network, loss, loss_and_input_gradient

THEOREMS = ("linear", "onaverage", "perw", "baseline")


@dataclass(frozen=True)
class BoundInput:
    lam: float
    m: int
    delta: float
    prior_var: float
    sigma_y: Any = 1.0  # scalar, or (k, d) per-label per-dimension stds
    b: float | None = None
    g: float | None = None
    n_prior: int = 64
    n_data: int = 4096
    n_posterior: int = 32
    seed: int = 0
    sigma_y_source: str = "config"

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam!r}")
        if int(self.m) != self.m or self.m < 1:
            raise InvalidInputError(f"m must be a positive integer, got {self.m!r}")
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not self.prior_var > 0:
            raise InvalidInputError(f"prior variance must be positive, got {self.prior_var!r}")
        s = np.asarray(self.sigma_y, dtype=float)
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise InvalidInputError("sigma_y must be finite and non-negative")
        if min(self.n_prior, self.n_data, self.n_posterior) < 1:
            raise InvalidInputError("estimator sizes must be >= 1")

    def sigma_y_max_var(self) -> float:
        """Largest per-label per-dimension variance (conservative scalar)."""
        return float(np.max(np.asarray(self.sigma_y, dtype=float)) ** 2)

    def sigma_y_array(self, k: int, d: int) -> np.ndarray:
        s = np.asarray(self.sigma_y, dtype=float)
        if s.ndim == 0:
            return np.full((k, d), float(s))
        if s.shape != (k, d):
            raise InvalidInputError(f"sigma_y has shape {s.shape}, expected ({k}, {d})")
        return s

    def settings(self) -> dict:
        out = asdict(self)
        s = np.asarray(self.sigma_y, dtype=float)
        out["sigma_y"] = float(s) if s.ndim == 0 else s.tolist()
        return out


@dataclass(frozen=True)
class BoundReport:
    complexity: float
    kl: float
    empirical_risk: float
    log_inv_delta: float
    rhs: float
    lam: float
    theorem: str
    metadata: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return not math.isfinite(self.rhs)

    @property
    def gap_term(self) -> float:
        return (self.complexity + self.kl + self.log_inv_delta) / self.lam

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "complexity": self.complexity,
            "kl": self.kl,
            "empirical_risk": self.empirical_risk,
            "log_inv_delta": self.log_inv_delta,
            "lambda": self.lam,
            "rhs": self.rhs,
            "flagged": self.flagged,
            "metadata": self.metadata,
        }


def linear_lambda_max(g: float, sigma_p: float, sigma_y: float, m: int) -> float:
    """Largest admissible lambda for the linear-model bound: ``sqrt(m/16) / (g sigma_p sigma_y)``."""
    denom = g * sigma_p * sigma_y
    if not denom > 0 or not math.isfinite(denom):
        raise InvalidInputError("g, sigma_p and sigma_y must be positive and finite")
    return math.sqrt(m / 16) / denom


def linear_complexity(k: int, d: int) -> float:
    """``k d log sqrt(4/3)``."""
    if k < 1 or d < 1:
        raise InvalidInputError("k and d must be >= 1")
    return k * d * 0.5 * math.log(4.0 / 3.0)


def gaussian_quadratic_mgf(c: float, var: float, n_dims: int) -> float:
    """``log E_{w ~ N(0, var I)} exp(c |w|^2) = -(n_dims/2) log(1 - 2 c var)``."""
    u = 2.0 * c * var
    if u >= 1.0:
        raise DivergenceError(f"2 c var = {u!r} >= 1; the Gaussian integral diverges")
    if n_dims < 1 or var < 0:
        raise InvalidInputError("n_dims must be >= 1 and var >= 0")
    return -0.5 * n_dims * math.log1p(-u)


def gaussian_quadratic_mgf_mc(
    c: float, var: float, n_dims: int, n: int, seed: int, proposal_scale: float = 4.0
) -> tuple[float, float]:
    """Importance-sampled Monte Carlo estimate of the same log-expectation.

    Draws come from ``N(0, proposal_scale * var)``, which keeps the estimator's
    variance finite for ``2 c var < 1 - 1/(2 proposal_scale)``. Returns the
    estimate and its delta-method standard error.
    """
    u = 2.0 * c * var
    if u >= 1.0 - 1.0 / (2.0 * proposal_scale):
        raise InvalidInputError(
            f"2 c var = {u!r} too close to 1 for proposal scale {proposal_scale}; estimator variance is infinite"
        )
    if var == 0:
        return 0.0, 0.0
    w = np.sqrt(proposal_scale * var) * rng.chunked_standard_normal(seed, "quadratic-mgf", n, n_dims)
    w2 = w**2
    logt = np.sum(c * w2 + 0.5 * math.log(proposal_scale) - w2 * (1.0 - 1.0 / proposal_scale) / (2.0 * var), axis=1)
    s = logt.max()
    t = np.exp(logt - s)
    mean = t.mean()
    se = t.std(ddof=1) / math.sqrt(n) / mean
    return float(s + math.log(mean)), float(se)


def _check_lam_le_m(lam: float, m: int) -> None:
    if lam > m:
        raise ConstraintViolation(f"lambda = {lam:g} exceeds m = {m}; the on-average bounds need 0 < lambda <= m")


def global_onaverage_complexity(inp: BoundInput) -> float:
    """``lam^2 e^b g sigma_y^2 / (2m)`` with ``sigma_y^2`` the largest per-label variance."""
    if inp.b is None or inp.g is None:
        raise InvalidInputError("the global on-average bound needs both b and g")
    _check_lam_le_m(inp.lam, inp.m)
    if inp.g == 0:
        return 0.0
    return inp.lam**2 * math.exp(inp.b) * inp.g * inp.sigma_y_max_var() / (2 * inp.m)


@dataclass(frozen=True)
class PriorComplexity:
    value: float
    b: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)
    exponents: np.ndarray = field(repr=False)
    diagnostic: str = ""

    def metadata(self) -> dict:
        return {
            "n_prior": int(self.b.size),
            "b_max": float(self.b.max()),
            "g_max": float(self.g.max()),
            "b_mean": float(self.b.mean()),
            "g_mean": float(self.g.mean()),
            "diagnostic": self.diagnostic,
        }


def _prior_gaussian(prior, net: Network) -> DiagonalGaussian:
    if isinstance(prior, DiagonalGaussian):
        if prior.dim != net.n_params:
            raise InvalidInputError(f"prior has dimension {prior.dim}, network has {net.n_params} weights")
        return prior
    return DiagonalGaussian.isotropic(net.n_params, float(prior))


def prior_draw(prior: DiagonalGaussian, seed: int, j: int) -> np.ndarray:
    return prior.mean + prior.std * rng.generator(seed, "prior-draw", j).standard_normal(prior.dim)


def loss_grad_stats(net: Network, weights: np.ndarray, data: Dataset, kind, sigma=None) -> tuple[float, float]:
    """``(mean loss, mean |sigma * grad_x loss|^2)`` of one weight vector over ``data``."""
    losses, gx = loss_and_input_gradient(net, data.X, data.y, kind, weights)
    if sigma is not None:
        gx = gx * sigma
    return float(losses.mean()), float(np.mean(np.sum(gx**2, axis=1)))


def per_w_complexity(
    net: Network,
    prior,
    dist: LabeledMixture,
    inp: BoundInput,
    kind=LossKind.NLL,
    workers: int = 1,
    data: Dataset | None = None,
) -> PriorComplexity:
    """``log E_{w~p} exp(lam^2 e^{b(w)} g(w) / 2m)`` by Monte Carlo over ``n_prior`` draws.

    ``b(w)`` is the mean loss and ``g(w)`` the mean of ``|sigma_y * grad_x loss|^2``
    over one shared set of ``n_data`` mixture samples, with ``sigma_y`` applied
    per label and dimension.
    """
    _check_lam_le_m(inp.lam, inp.m)
    b, g = prior_loss_grad_stats(net, prior, dist, inp, kind, workers, data)
    return complexity_from_stats(b, g, inp.lam, inp.m)


def complexity_from_stats(b: np.ndarray, g: np.ndarray, lam: float, m: int) -> PriorComplexity:
    """Log-mean-exp of ``lam^2 e^{b_j} g_j / 2m`` over per-draw statistics.

    ``g_j`` must already include the ``sigma_y`` scaling. The statistics do
    not depend on ``lam``, so a lambda sweep can reuse one set of draws.
    """
    _check_lam_le_m(lam, m)
    b = np.asarray(b, dtype=float)
    g = np.asarray(g, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        log_e = 2 * math.log(lam) + b + np.log(g) - math.log(2 * m)
        exps = np.exp(log_e)
    if not np.all(np.isfinite(exps)):
        bad = np.flatnonzero(~np.isfinite(exps))
        diag = "exponent overflow at prior draws " + ", ".join(
            f"j={j} (b={b[j]:.6g}, g={g[j]:.6g})" for j in bad[:10]
        )
        return PriorComplexity(math.inf, b, g, exps, diag)
    value = float(logsumexp(exps) - math.log(exps.size))
    if not math.isfinite(value):
        return PriorComplexity(math.inf, b, g, exps, "log-mean-exp overflow")
    return PriorComplexity(max(value, 0.0), b, g, exps)


def prior_loss_grad_stats(
    net: Network, prior, dist: LabeledMixture, inp: BoundInput, kind=LossKind.NLL, workers: int = 1, data=None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw ``(b_j, g_j)`` as used by :func:`per_w_complexity`."""
    prior = _prior_gaussian(prior, net)
    if data is None:
        data = sample_mixture(dist, inp.n_data, rng.subseed(inp.seed, "complexity-data"))
    sigma = inp.sigma_y_array(dist.n_classes, dist.dim)[data.y]

    def stats(j):
        return loss_grad_stats(net, prior_draw(prior, inp.seed, j), data, kind, sigma)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(stats, range(inp.n_prior)))
    else:
        results = [stats(j) for j in range(inp.n_prior)]
    return np.array([r[0] for r in results]), np.array([r[1] for r in results])


def baseline_bounded_complexity(B: float, lam: float, m: int) -> float:
    """Bounded-loss (Hoeffding) complexity ``lam^2 B^2 / (2m)``."""
    if B < 0:
        raise InvalidInputError("B must be non-negative")
    return lam**2 * B**2 / (2 * m)


def assemble_bound(
    empirical_risk: float,
    complexity: float,
    kl: float,
    inp: BoundInput,
    theorem: str = "perw",
    metadata: dict | None = None,
) -> BoundReport:
    if not math.isfinite(empirical_risk):
        raise InvalidInputError("empirical risk must be finite")
    if kl < 0 or not math.isfinite(kl):
        raise InvalidInputError("KL must be finite and non-negative")
    if theorem not in THEOREMS:
        raise InvalidInputError(f"unknown theorem tag {theorem!r}")
    log_inv_delta = -math.log(inp.delta)
    rhs = empirical_risk + (complexity + kl + log_inv_delta) / inp.lam
    meta = {"bound_input": inp.settings(), "rng": rng.GENERATOR_NAME}
    meta.update(metadata or {})
    return BoundReport(float(complexity), float(kl), float(empirical_risk), log_inv_delta, float(rhs), float(inp.lam), theorem, meta)


@dataclass(frozen=True)
class RiskEstimate:
    train_risk: float
    true_risk: float
    n_posterior: int

    def __iter__(self):
        return iter((self.train_risk, self.true_risk))


def expected_risks(
    net: Network,
    posterior: DiagonalGaussian,
    train: Dataset,
    dist: LabeledMixture | None = None,
    heldout: Dataset | None = None,
    n_posterior: int = 32,
    n_data: int = 4096,
    seed: int = 0,
    kind=LossKind.NLL,
) -> RiskEstimate:
    """``(E_q L_S, E_q L_D)``: posterior-averaged train risk and a Monte Carlo true risk.

    ``L_D`` is estimated on fresh mixture samples (shared across posterior draws)
    or, when ``heldout`` is given, on that held-out set.
    """
    if len(train) == 0:
        raise InvalidInputError("empty training set")
    if n_posterior < 1:
        raise InvalidInputError("need at least one posterior draw")
    if heldout is None:
        if dist is None:
            raise InvalidInputError("need either a data distribution or a held-out set")
        heldout = sample_mixture(dist, n_data, rng.subseed(seed, "risk-data"))
    posterior = _prior_gaussian(posterior, net)
    deterministic = bool(np.all(posterior.variance == 0))
    draws = 1 if deterministic else n_posterior
    ls, ld = [], []
    for j in range(draws):
        w = posterior.mean if deterministic else posterior.mean + posterior.std * rng.generator(seed, "posterior-draw", j).standard_normal(posterior.dim)
        q = net.with_weights(w)
        ls.append(loss(q, train.X, train.y, kind).mean())
        ld.append(loss(q, heldout.X, heldout.y, kind).mean())
    return RiskEstimate(float(np.mean(ls)), float(np.mean(ld)), draws)


def posterior_around(center: Network, prior_var: float, ratio: float = 1e-2) -> DiagonalGaussian:
    """Diagonal Gaussian centered at trained weights with variance ``ratio * prior_var``."""
    return DiagonalGaussian(center.weights, np.full(center.n_params, ratio * prior_var))
