import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsibound import rng
from lsibound.bounds import (
    BoundInput,
    assemble_bound,
    baseline_bounded_complexity,
    complexity_from_stats,
    expected_risks,
    gaussian_quadratic_mgf,
    gaussian_quadratic_mgf_mc,
    global_onaverage_complexity,
    linear_complexity,
    linear_lambda_max,
    per_w_complexity,
    posterior_around,
    prior_draw,
)
from lsibound.distributions import DiagonalGaussian, make_synthetic_mixture, sample_mixture
from lsibound.errors import ConstraintViolation, DivergenceError, InvalidInputError
from lsibound.models import LossKind, input_gradient, linear, loss, mlp_by_depth


def inp(**kw):
    base = dict(lam=10.0, m=100, delta=0.01, prior_var=0.01)
    base.update(kw)
    return BoundInput(**base)


def test_linear_lambda_max():
    assert linear_lambda_max(2, 0.1, 1, 1600) == pytest.approx(50.0)
    assert linear_lambda_max(1, 1, 1, 16) == pytest.approx(1.0)
    assert linear_lambda_max(1e6, 1, 1, 16) < linear_lambda_max(1e3, 1, 1, 16)
    with pytest.raises(InvalidInputError):
        linear_lambda_max(0.0, 1, 1, 16)


def test_linear_complexity():
    assert linear_complexity(1, 1) == pytest.approx(0.5 * math.log(4 / 3))
    assert linear_complexity(10, 784) == pytest.approx(7840 * 0.5 * math.log(4 / 3))
    assert linear_complexity(10, 784) == pytest.approx(1127.7, abs=0.05)
    with pytest.raises(InvalidInputError):
        linear_complexity(0, 5)


def test_quadratic_mgf_closed_form():
    assert gaussian_quadratic_mgf(0.0, 1.0, 3) == 0.0
    assert gaussian_quadratic_mgf(0.5, 0.5, 1) == pytest.approx(math.log(math.sqrt(2)))
    with pytest.raises(DivergenceError):
        gaussian_quadratic_mgf(0.5, 1.0, 1)


def test_quadratic_mgf_mc_matches():
    est, se = gaussian_quadratic_mgf_mc(0.1, 1.0, 4, 1_000_000, 0)
    assert abs(est - gaussian_quadratic_mgf(0.1, 1.0, 4)) <= 3 * se


def test_global_onaverage():
    assert global_onaverage_complexity(inp(b=1.0, g=0.0)) == 0.0
    c = global_onaverage_complexity(inp(lam=1000, m=1000, b=1.0, g=0.01, sigma_y=1.0))
    assert c == pytest.approx(1000 * math.e * 0.01 / 2)
    assert c / 1000 == pytest.approx(0.0136, abs=1e-4)
    assert global_onaverage_complexity(inp(lam=1000, m=1000, b=0.0, g=1.0)) == pytest.approx(500.0)
    with pytest.raises(ConstraintViolation):
        global_onaverage_complexity(inp(lam=101, m=100, b=0.0, g=1.0))
    with pytest.raises(InvalidInputError):
        global_onaverage_complexity(inp(b=1.0))


def test_per_w_zero_gradient_family():
    mix = make_synthetic_mixture(10, 4)
    pc = per_w_complexity(linear(4, 10), 1e-300, mix, inp(n_prior=4, n_data=64))
    assert pc.value == 0.0
    assert pc.b == pytest.approx(np.full(4, math.log(10)))


def test_per_w_single_draw_matches_global():
    mix = make_synthetic_mixture(3, 4, std=0.7)
    bi = inp(lam=50.0, m=100, n_prior=1, n_data=512, sigma_y=0.7)
    pc = per_w_complexity(mlp_by_depth(4, 3, 2, width=5), 0.5, mix, bi)
    g_raw = pc.g[0] / 0.7**2  # per-w folds sigma_y into g
    glob = global_onaverage_complexity(inp(lam=50.0, m=100, b=pc.b[0], g=g_raw, sigma_y=0.7))
    assert pc.value == pytest.approx(glob, rel=1e-10)


def test_per_w_tiny_instance_brute_force():
    mix = make_synthetic_mixture(2, 2, separation=1.0)
    bi = inp(lam=4.0, m=16, n_prior=3, n_data=200, seed=9, sigma_y=1.0)
    net = linear(2, 2)
    pc = per_w_complexity(net, 0.3, mix, bi)
    # independent recomputation: same draws, plain loops, no log-sum-exp helper
    data = sample_mixture(mix, 200, rng.subseed(9, "complexity-data"))
    prior = DiagonalGaussian.isotropic(net.n_params, 0.3)
    terms = []
    for j in range(3):
        q = net.with_weights(prior_draw(prior, 9, j))
        b = loss(q, data.X, data.y, LossKind.NLL).mean()
        gx = input_gradient(q, data.X, data.y, LossKind.NLL)
        g = np.mean(np.sum(gx**2, axis=1))
        terms.append(math.exp(4.0**2 * math.exp(b) * g / (2 * 16)))
    assert pc.value == pytest.approx(math.log(sum(terms) / 3), rel=1e-12)


def test_per_w_lambda_constraint():
    with pytest.raises(ConstraintViolation):
        per_w_complexity(linear(2, 2), 0.1, make_synthetic_mixture(2, 2), inp(lam=200, m=100))


def test_overflow_reported_as_infinite():
    pc = complexity_from_stats(np.array([1.0, 800.0]), np.array([1.0, 1.0]), 10.0, 100)
    assert pc.value == math.inf and "j=1" in pc.diagnostic


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 5), st.floats(0, 3)), min_size=1, max_size=20),
    st.floats(0.5, 1.0),
    st.floats(0.1, 2.0),
)
def test_per_w_dominated_by_global(draws, lam_frac, sigma):
    b, g = map(np.array, zip(*draws))
    m = 50
    lam = lam_frac * m
    per_w = complexity_from_stats(b, g, lam, m).value
    glob = global_onaverage_complexity(inp(lam=lam, m=m, b=float(b.max()), g=float(g.max()) / sigma**2, sigma_y=sigma))
    assert per_w <= glob * (1 + 1e-12) + 1e-12


def test_baseline():
    assert baseline_bounded_complexity(0.0, 10, 100) == 0.0
    assert baseline_bounded_complexity(1.0, 100, 100) == pytest.approx(50.0)
    assert baseline_bounded_complexity(2.0, 10, 100) == pytest.approx(2.0)
    with pytest.raises(InvalidInputError):
        baseline_bounded_complexity(-1.0, 1, 1)


def test_assemble_examples():
    r = assemble_bound(0.0, 0.0, 0.0, inp(lam=1.0, delta=math.exp(-1)))
    assert r.rhs == pytest.approx(1.0, abs=1e-15)
    r = assemble_bound(0.02, 10.0, 5.0, inp(lam=1000.0, m=1000))
    assert r.rhs == pytest.approx(0.02 + (15 + math.log(100)) / 1000, abs=1e-15)
    assert r.rhs == pytest.approx(0.0396, abs=1e-4)
    r = assemble_bound(0.1, math.inf, 1.0, inp())
    assert r.rhs == math.inf and r.flagged
    with pytest.raises(InvalidInputError):
        assemble_bound(math.nan, 1.0, 1.0, inp())


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 10), st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0.1, 1e4), st.floats(1e-6, 0.999))
def test_assemble_arithmetic(risk, comp, kl, lam, delta):
    r = assemble_bound(risk, comp, kl, inp(lam=lam, delta=delta))
    assert abs(r.rhs - r.empirical_risk - (r.complexity + r.kl + r.log_inv_delta) / r.lam) <= 1e-12 * max(1.0, r.rhs)


def test_expected_risks_zero_posterior():
    mix = make_synthetic_mixture(10, 5)
    train = sample_mixture(mix, 50, 0)
    net = linear(5, 10)
    q = DiagonalGaussian(np.zeros(net.n_params), np.zeros(net.n_params))
    r = expected_risks(net, q, train, mix, n_posterior=8, n_data=100)
    assert r.train_risk == pytest.approx(math.log(10), rel=1e-15) and r.n_posterior == 1


def test_expected_risks_degenerate_posterior_reduces_to_train_loss():
    mix = make_synthetic_mixture(3, 4)
    train = sample_mixture(mix, 40, 1)
    net = linear(4, 3).with_weights(np.random.default_rng(0).normal(size=12))
    q = posterior_around(net, 0.01, ratio=0.0)
    r = expected_risks(net, q, train, mix)
    assert r.train_risk == pytest.approx(loss(net, train.X, train.y, LossKind.NLL).mean(), rel=1e-15)


def test_expected_risks_rejects_empty():
    mix = make_synthetic_mixture(2, 2)
    with pytest.raises(InvalidInputError):
        expected_risks(linear(2, 2), 0.1, sample_mixture(mix, 0, 0), mix)


def test_prior_loss_regime():
    # a 3-layer MLP under N(0, 0.01 I) on the 20-dim 10-class mixture has
    # near-uniform logits, so the on-average loss sits just below log 10
    mix = make_synthetic_mixture(10, 20)
    net = mlp_by_depth(20, 10, 3)
    prior = DiagonalGaussian.isotropic(net.n_params, 0.01)
    data = sample_mixture(mix, 1000, 0)
    r = expected_risks(net, prior, data, mix, n_posterior=16, n_data=2000)
    assert 1.0 <= r.train_risk <= math.log(10) + 0.1


def test_bound_input_validation():
    for bad in (dict(lam=0), dict(m=0), dict(delta=1.0), dict(prior_var=0.0), dict(sigma_y=-1.0)):
        with pytest.raises(InvalidInputError):
            inp(**bad)
