"""Stock suite of numerical identity checks for the entropy module.

Each check returns a dict with ``check``, ``passed`` and the numbers behind the
verdict; the CLI writes one JSON line per check.
"""
from __future__ import annotations

import math

import numpy as np

from .. import rng
from ..bounds import gaussian_quadratic_mgf, gaussian_quadratic_mgf_mc
from ..distributions import DiagonalGaussian, LabeledMixture
from ..entropy import (
    entropy_decomposition_check,
    gaussian_lsi_gap,
    herbst_check,
    herbst_grid,
    rademacher_lsi_gap,
)

Z_TOL = 3.0
HERBST_FLOOR = 1e-4  # quadrature slack on the default 256-point grid
EXACT_TOL = 1e-12


def _std_normal_1d() -> LabeledMixture:
    return LabeledMixture(np.array([1.0]), (DiagonalGaussian.isotropic(1, 1.0),))


def check_lsi_linear(lam: float, n: int, seed: int) -> dict:
    """``f(z) = lam z`` saturates the Gaussian LSI; both sides equal ``lam^2/2 e^{lam^2/2}``."""
    g = DiagonalGaussian.isotropic(1, 1.0)
    r = gaussian_lsi_gap(lambda z: lam * z[:, 0], lambda z: np.full_like(z, lam), g, n, rng.subseed(seed, "verify-lsi-linear", int(lam * 1000)))
    exact = 0.5 * lam**2 * math.exp(0.5 * lam**2)
    ok = (
        abs(r.gap) <= Z_TOL * r.diff_se
        and abs(r.lhs - exact) <= Z_TOL * r.lhs_se
        and abs(r.rhs - exact) <= Z_TOL * r.rhs_se
    )
    return {"check": f"lsi_linear_{lam:g}", "passed": bool(ok), "lhs": r.lhs, "rhs": r.rhs, "exact": exact,
            "lhs_se": r.lhs_se, "rhs_se": r.rhs_se, "diff_se": r.diff_se}


def check_lsi_nonlinear(n: int, seed: int) -> dict:
    """``f(z) = z^2/4``: the inequality holds strictly."""
    g = DiagonalGaussian.isotropic(1, 1.0)
    r = gaussian_lsi_gap(lambda z: z[:, 0] ** 2 / 4, lambda z: z / 2, g, n, rng.subseed(seed, "verify-lsi-quad"))
    ok = r.lhs <= r.rhs + Z_TOL * r.diff_se
    return {"check": "lsi_quadratic", "passed": bool(ok), "lhs": r.lhs, "rhs": r.rhs, "diff_se": r.diff_se}


HERBST_LOSSES = {
    "constant": lambda X, y: np.full(X.shape[0], 0.7),
    "clipped_linear": lambda X, y: np.maximum(X[:, 0], 0.0),
    "square": lambda X, y: X[:, 0] ** 2,
}


def check_herbst(name: str, n: int, seed: int, grid_points: int, lam: float = 4.0, m: int = 4) -> dict:
    r = herbst_check(HERBST_LOSSES[name], _std_normal_1d(), lam, m, n, rng.subseed(seed, "verify-herbst", list(HERBST_LOSSES).index(name)),
                     herbst_grid(lam / m, grid_points))
    tol = Z_TOL * r.diff_se + HERBST_FLOOR
    out = {"check": f"herbst_{name}", "passed": bool(abs(r.gap) <= tol), "lhs": r.lhs, "rhs": r.rhs,
           "diff_se": r.diff_se, "tolerance": tol, "grid_points": grid_points}
    if name == "square":
        # lam E x^2 + m log E exp(-x^2) = 4 - 2 log 3 under N(0, 1)
        exact = lam + m * math.log(1 / math.sqrt(1 + 2 * lam / m))
        lhs_ok = abs(r.lhs - exact) <= Z_TOL * r.lhs_se
        out.update(lhs_exact=exact, lhs_se=r.lhs_se, passed=bool(out["passed"] and lhs_ok))
    return out


def check_decomposition_exact(seed: int, k: int = 3) -> dict:
    g = rng.generator(seed, "verify-decomp-exact")
    marg = g.dirichlet(np.ones(k))
    # each label is a point mass, so a Gaussian with zero variance
    comps = tuple(DiagonalGaussian(g.normal(size=2), np.zeros(2)) for _ in range(k))
    mix = LabeledMixture(marg, comps)
    coef = g.normal(size=2)
    r = entropy_decomposition_check(lambda X, y: np.exp(X @ coef), mix, 1, seed)
    ok = abs(r.discrepancy) <= EXACT_TOL * max(1.0, abs(r.total))
    return {"check": "decomposition_exact", "passed": bool(ok), "total": r.total, "within": r.within_sum,
            "between": r.between, "discrepancy": r.discrepancy}


def check_decomposition_mc(n: int, seed: int) -> dict:
    mix = LabeledMixture(
        np.array([0.2, 0.3, 0.5]),
        tuple(DiagonalGaussian(np.array([mu, -mu]), np.array([1.0, 0.5])) for mu in (-1.0, 0.0, 1.5)),
    )
    r = entropy_decomposition_check(lambda X, y: np.exp(0.5 * X[:, 0] - 0.25 * X[:, 1]), mix, n, rng.subseed(seed, "verify-decomp-mc"))
    ok = abs(r.discrepancy) <= Z_TOL * r.combined_se
    return {"check": "decomposition_mc", "passed": bool(ok), "total": r.total, "within": r.within_sum,
            "between": r.between, "discrepancy": r.discrepancy, "combined_se": r.combined_se}


def check_rademacher(d: int, seed: int, trials: int = 20) -> dict:
    g = rng.generator(seed, "verify-rademacher", d)
    worst = -math.inf
    for _ in range(trials):
        r = rademacher_lsi_gap(g.normal(scale=2.0, size=2**d), d)
        worst = max(worst, (r.lhs - r.rhs) / max(r.rhs, 1e-300))
    # relative slack covers floating-point rounding only
    return {"check": f"rademacher_d{d}", "passed": bool(worst <= EXACT_TOL), "worst_relative_excess": worst, "trials": trials}


def check_quadratic_mgf(n: int, seed: int) -> dict:
    c, var, dims = 0.5, 0.4, 3
    exact = gaussian_quadratic_mgf(c, var, dims)
    est, se = gaussian_quadratic_mgf_mc(c, var, dims, n, rng.subseed(seed, "verify-mgf"))
    return {"check": "quadratic_mgf", "passed": bool(abs(est - exact) <= Z_TOL * se), "exact": exact,
            "estimate": est, "se": se}


def run_suite(seed: int, n: int = 1_000_000, grid_points: int = 256) -> list[dict]:
    results = [check_lsi_linear(lam, n, seed) for lam in (0.5, 1.0, 2.0)]
    results.append(check_lsi_nonlinear(n, seed))
    results += [check_herbst(name, n, seed, grid_points) for name in HERBST_LOSSES]
    results.append(check_decomposition_exact(seed))
    results.append(check_decomposition_mc(n, seed))
    results += [check_rademacher(d, seed) for d in (1, 4, 8)]
    results.append(check_quadratic_mgf(n, seed))
    return results
