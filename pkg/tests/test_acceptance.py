"""Acceptance suite: one test and one PASS/FAIL summary line per criterion.

Tolerances and runtime budgets are fixed up front; every Monte Carlo check
runs on a fixed seed and is not retried.
"""
import math
import time

import numpy as np
import pytest

from acceptance_log import report
from fdcheck import architectures, input_probe_errors, weight_probe_errors
from lsibound import rng
from lsibound.bounds import gaussian_quadratic_mgf, gaussian_quadratic_mgf_mc
from lsibound.distributions import DiagonalGaussian, LabeledMixture, mixture_to_config
from lsibound.entropy import (
    entropy_decomposition_check,
    entropy_decomposition_exact,
    gaussian_lsi_gap,
    herbst_check,
    herbst_grid,
    rademacher_lsi_gap,
)
from lsibound.harness import experiments
from lsibound.harness.config import load_config
from lsibound.models import LossKind

Z = 3.0
N_MC = 1_000_000
SEEDS = (0, 1, 2)


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def std_normal_1d():
    return LabeledMixture(np.array([1.0]), (DiagonalGaussian.isotropic(1, 1.0),))


# ---- 1: gradients ---------------------------------------------------------------


def test_criterion_01_gradients():
    def run():
        worst = 0.0
        for arch, net in architectures().items():
            for i, kind in enumerate(LossKind):
                worst = max(worst, input_probe_errors(net, kind, 100, 100 + i).max())
                worst = max(worst, weight_probe_errors(net, kind, 100, 200 + i).max())
        return worst

    worst, secs = timed(run)
    ok = worst <= 1e-4 and secs < 60
    assert report(1, "gradient correctness", ok, f"max rel err {worst:.2e} (tol 1e-4), {secs:.1f}s")


# ---- 2: Gaussian LSI is tight on linear f --------------------------------------


def test_criterion_02_lsi_tightness():
    def run():
        details, ok = [], True
        g = DiagonalGaussian.isotropic(1, 1.0)
        for lam in (0.5, 1.0, 2.0):
            r = gaussian_lsi_gap(
                lambda z: lam * z[:, 0], lambda z: np.full_like(z, lam), g, N_MC, rng.subseed(2, "accept-lsi", int(lam * 10))
            )
            exact = 0.5 * lam**2 * math.exp(0.5 * lam**2)
            z_gap = abs(r.gap) / r.diff_se
            z_l = abs(r.lhs - exact) / r.lhs_se
            z_r = abs(r.rhs - exact) / r.rhs_se
            ok &= max(z_gap, z_l, z_r) <= Z
            details.append(f"lam={lam:g}: z(gap,lhs,rhs)=({z_gap:.2f},{z_l:.2f},{z_r:.2f})")
        return ok, details

    (ok, details), secs = timed(run)
    ok = ok and secs < 60
    assert report(2, "LSI tightness", ok, "; ".join(details) + f", {secs:.1f}s")


# ---- 3: Herbst identity ---------------------------------------------------------


def test_criterion_03_herbst():
    lam, m = 4.0, 4
    losses = {"const": lambda X, y: np.full(X.shape[0], 0.7), "square": lambda X, y: X[:, 0] ** 2}

    def run():
        details, ok = [], True
        grid = herbst_grid(lam / m, 64)
        for i, (name, f) in enumerate(losses.items()):
            r = herbst_check(f, std_normal_1d(), lam, m, N_MC, rng.subseed(3, "accept-herbst", i), grid)
            tol = Z * r.diff_se + 1e-3
            ok &= abs(r.gap) <= tol
            details.append(f"{name}: |gap|={abs(r.gap):.2e} tol={tol:.2e}")
            if name == "square":
                exact = 4 + 4 * math.log(1 / math.sqrt(3))
                z = abs(r.lhs - exact) / r.lhs_se
                ok &= z <= Z
                details.append(f"lhs={r.lhs:.4f} vs {exact:.4f} (z={z:.2f})")
        return ok, details

    (ok, details), secs = timed(run)
    ok = ok and secs < 120
    assert report(3, "Herbst identity", ok, "; ".join(details) + f", {secs:.1f}s")


# ---- 4: entropy decomposition ---------------------------------------------------


def test_criterion_04_decomposition():
    def run():
        g = np.random.default_rng(4)
        worst = 0.0
        for k in (2, 3, 5):
            for _ in range(100):
                marg = g.dirichlet(np.ones(k))
                # point masses: f on label y is a single non-negative number
                vals = g.exponential(size=k) * (g.uniform(size=k) > 0.1)
                if not np.any(vals > 0):
                    vals[0] = 1.0
                r = entropy_decomposition_exact([[v] for v in vals], [[1.0]] * k, marg)
                worst = max(worst, abs(r.discrepancy) / max(1.0, abs(r.total)))
                # the same family through the mixture path
                comps = tuple(DiagonalGaussian(np.array([float(y)]), np.zeros(1)) for y in range(k))
                r2 = entropy_decomposition_check(lambda X, y, v=vals: v[y], LabeledMixture(marg, comps), 1, 0)
                worst = max(worst, abs(r2.discrepancy) / max(1.0, abs(r2.total)))
        zs = []
        for i, mus in enumerate(((-1.0, 1.0), (-1.0, 0.0, 1.5), (0.0, 0.5, 1.0, 2.0, -2.0))):
            k = len(mus)
            marg = np.random.default_rng(40 + i).dirichlet(np.ones(k))
            mix = LabeledMixture(marg, tuple(DiagonalGaussian(np.array([mu, -mu]), np.array([1.0, 0.5])) for mu in mus))
            r = entropy_decomposition_check(
                lambda X, y: np.exp(0.5 * X[:, 0] - 0.25 * X[:, 1]), mix, N_MC, rng.subseed(4, "accept-decomp", i)
            )
            zs.append(abs(r.discrepancy) / r.combined_se)
        return worst, zs

    (worst, zs), secs = timed(run)
    ok = worst <= 1e-12 and max(zs) <= Z and secs < 60
    detail = f"exact worst {worst:.1e} (tol 1e-12); MC z = {', '.join(f'{z:.2f}' for z in zs)}, {secs:.1f}s"
    assert report(4, "entropy decomposition", ok, detail)


# ---- 5: Rademacher LSI ----------------------------------------------------------


def test_criterion_05_rademacher():
    def run():
        g = np.random.default_rng(5)
        violations, worst = 0, -math.inf
        for d in (1, 4, 8):
            for _ in range(100):
                r = rademacher_lsi_gap(g.normal(scale=2.0, size=2**d), d)
                violations += int(r.lhs > r.rhs)
                worst = max(worst, r.lhs - r.rhs)
        return violations, worst

    (violations, worst), secs = timed(run)
    ok = violations == 0 and secs < 60
    assert report(5, "Rademacher LSI", ok, f"{violations}/300 violations, max lhs-rhs {worst:.3e}, {secs:.1f}s")


# ---- 6: Gaussian quadratic MGF --------------------------------------------------


def test_criterion_06_quadratic_mgf():
    def run():
        g = np.random.default_rng(6)
        zs = []
        for i in range(20):
            var = float(g.uniform(0.05, 2.0))
            c = float(g.uniform(0.0, 0.8 / (2 * var)))
            dims = int(g.integers(1, 6))
            est, se = gaussian_quadratic_mgf_mc(c, var, dims, N_MC, rng.subseed(6, "accept-mgf", i))
            exact = gaussian_quadratic_mgf(c, var, dims)
            zs.append(abs(est - exact) / se if se > 0 else (0.0 if est == exact else math.inf))
        return zs

    zs, secs = timed(run)
    ok = max(zs) <= Z and secs < 60
    assert report(6, "quadratic MGF oracle", ok, f"max z {max(zs):.2f} over 20 cases (tol 3), {secs:.1f}s")


# ---- 7: bound validity ----------------------------------------------------------


def validity_config(trial: int):
    mix = LabeledMixture(
        np.array([0.5, 0.5]),
        (DiagonalGaussian(np.full(8, -0.5), np.ones(8)), DiagonalGaussian(np.full(8, 0.5), np.ones(8))),
    )
    items = [f"{k}={v}" for k, v in mixture_to_config(mix).items()]
    items += [
        "data.classes=2",
        "data.dim=8",
        "data.n_train=256",
        "data.n_test=4096",
        "model.arch=linear",
        "bound.theorem=linear",
        "bound.lambda=0.9*max",
        "bound.delta=0.01",
        "bound.prior_var=1.0",
        "bound.n_posterior=16",
        "bound.n_data=4096",
        f"seed={trial}",
    ]
    return load_config(None, items)


def test_criterion_07_bound_validity():
    def run():
        valid, slack = 0, []
        for trial in range(300):
            r = experiments.run_bound(validity_config(trial))
            true_risk = r.metadata["true_risk_estimate"]
            valid += int(true_risk <= r.rhs)
            slack.append(r.rhs - true_risk)
        return valid, slack

    (valid, slack), secs = timed(run)
    ok = valid >= 296 and secs < 600
    detail = f"{valid}/300 trials valid (need 296), min slack {min(slack):.3f}, {secs:.1f}s"
    assert report(7, "bound validity", ok, detail)


# ---- 8: lambda = m minimizes C/lambda (literal reading) --------------------------


def lambda_rows(seed: int):
    cfg = load_config(None, [f"seed={seed}", "bound.prior_var=0.01", "model.depth=3", "sweep.lambdas=sqrt(m),m/4,m/2,m"])
    return experiments.lambda_table(cfg, experiments.load_data(cfg))


def test_criterion_08_lambda_minimization():
    # C is convex in lambda with C(0) = 0, so C(lambda)/lambda cannot decrease;
    # this criterion is checked as written and is expected to fail
    def run():
        hits, parts = 0, []
        for seed in SEEDS:
            rows = lambda_rows(seed)
            vals = [r["complexity_over_lambda"] for r in rows]
            hits += int(int(np.argmin(vals)) == len(vals) - 1)
            parts.append("[" + ", ".join(f"{v:.4g}" for v in vals) + "]")
        return hits, parts

    (hits, parts), secs = timed(run)
    ok = hits == 3 and secs < 300
    detail = f"argmin at lambda=m in {hits}/3 seeds; C/lambda over (sqrt m, m/4, m/2, m): {' '.join(parts)}, {secs:.1f}s"
    assert report(8, "lambda=m minimizes C/lambda", ok, detail)


def test_full_gap_term_minimized_at_m():
    # supplementary: with the KL of the trained posterior included, the whole
    # (C + KL + log 1/delta)/lambda term is smallest at lambda = m
    hits = 0
    for seed in SEEDS:
        cfg = load_config(None, [f"seed={seed}", "bound.prior_var=0.01", "bound.n_posterior=4"])
        kl = experiments._shared(cfg).kl
        terms = [(r["complexity"] + kl + math.log(100)) / r["lambda"] for r in lambda_rows(seed)]
        hits += int(int(np.argmin(terms)) == len(terms) - 1)
    print(f"supplementary: full gap term minimized at lambda=m in {hits}/3 seeds")
    assert hits == 3


# ---- 9: depth trend -------------------------------------------------------------


def test_criterion_09_depth_trend():
    def run():
        hits, parts = 0, []
        for seed in SEEDS:
            cfg = load_config(None, [f"seed={seed}", "bound.lambda=m", "bound.prior_var=0.01", "sweep.depths=1,2,3"])
            rows, monotone = experiments.depth_table(cfg, experiments.load_data(cfg))
            hits += int(monotone)
            parts.append("[" + ", ".join(f"{r['complexity']:.3g}" for r in rows) + "]")
        return hits, parts

    (hits, parts), secs = timed(run)
    ok = hits == 3 and secs < 300
    assert report(9, "depth trend", ok, f"non-increasing in {hits}/3 seeds; C by depth 1,2,3: {' '.join(parts)}, {secs:.1f}s")


# ---- 10: ours against the bounded-loss baseline ----------------------------------


def test_criterion_10_baseline_ordering():
    def run():
        wins, parts = 0, []
        for seed in SEEDS:
            cfg = load_config(None, [f"seed={seed}", "bound.lambda=m", "bound.prior_var=0.01", "bound.baseline_B=max"])
            ours, base = experiments.run_compare(cfg)
            wins += int(ours.rhs < base.rhs)
            parts.append(f"{ours.rhs:.3f}<{base.rhs:.3f}")
        return wins, parts

    (wins, parts), secs = timed(run)
    ok = wins == 3 and secs < 300
    assert report(10, "baseline ordering", ok, f"ours < baseline in {wins}/3 seeds ({', '.join(parts)}), {secs:.1f}s")


# ---- 11: per-label balance ------------------------------------------------------


def test_criterion_11_label_balance():
    def run():
        rel = []
        for seed in SEEDS:
            payload = experiments.run_estimate(load_config(None, [f"seed={seed}", "bound.prior_var=0.01"]))
            assert "across_label_std" in payload["label_balance"]
            rel.append(payload["label_balance_relative_std"])
        return rel

    rel, secs = timed(run)
    ok = max(rel) < 0.05 and secs < 300
    assert report(11, "per-label balance", ok, f"relative std {', '.join(f'{r:.4f}' for r in rel)} (need < 0.05), {secs:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
