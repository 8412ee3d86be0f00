import math

import numpy as np
import pytest

from lsibound.bounds import BoundInput, per_w_complexity
from lsibound.distributions import DiagonalGaussian, LabeledMixture, make_synthetic_mixture, sample_mixture
from lsibound.errors import DivergenceError, InvalidInputError
from lsibound.models import LossKind, init_weights, linear, loss, mlp_by_depth
from lsibound.train import (
    TrainConfig,
    depth_sweep_complexity,
    label_balance,
    momentum_step,
    prior_sweep_stats,
    sgd_train,
)


def blobs():
    comps = (DiagonalGaussian(np.full(2, -3.0), np.full(2, 0.1)), DiagonalGaussian(np.full(2, 3.0), np.full(2, 0.1)))
    return LabeledMixture(np.array([0.5, 0.5]), comps)


def test_config_validation():
    for bad in (dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0), dict(epochs=-1)):
        with pytest.raises(InvalidInputError):
            TrainConfig(**bad)
    assert TrainConfig().learning_rate == 0.01 and TrainConfig().momentum == 0.9


def test_zero_epochs_leave_weights():
    net = init_weights(linear(2, 2), np.random.default_rng(0))
    trace = sgd_train(net, sample_mixture(blobs(), 32, 0), TrainConfig(epochs=0))
    assert np.array_equal(trace.network.weights, net.weights) and trace.epoch_loss.size == 0


def test_single_quadratic_step():
    # loss w^2 from w = 1: gradient 2, so one plain step with eta = 0.1 lands at 0.8
    w, v = momentum_step(np.array([1.0]), np.zeros(1), np.array([2.0]), 0.1, 0.0)
    assert w[0] == pytest.approx(0.8) and v[0] == pytest.approx(-0.2)


def test_momentum_accumulates():
    w, v = momentum_step(np.array([0.0]), np.array([-1.0]), np.array([1.0]), 0.1, 0.9)
    assert v[0] == pytest.approx(-1.0) and w[0] == pytest.approx(-1.0)


def test_separable_blobs_converge():
    trace = sgd_train(linear(2, 2), sample_mixture(blobs(), 256, 1), TrainConfig(epochs=50), init=True)
    assert trace.epoch_loss.size == 50
    assert trace.epoch_loss[-1] < 0.1


def test_training_is_deterministic():
    data = sample_mixture(make_synthetic_mixture(3, 5), 300, 2)
    cfg = TrainConfig(epochs=3, batch_size=64, seed=5)
    a = sgd_train(mlp_by_depth(5, 3, 2, width=8), data, cfg, init=True)
    b = sgd_train(mlp_by_depth(5, 3, 2, width=8), data, cfg, init=True)
    assert np.array_equal(a.network.weights, b.network.weights)
    assert np.all(np.isfinite(a.epoch_loss))


def test_divergence_raises_with_context():
    data = sample_mixture(make_synthetic_mixture(3, 5, separation=50.0), 256, 0)
    with pytest.raises(DivergenceError) as exc:
        sgd_train(mlp_by_depth(5, 3, 3, width=32), data, TrainConfig(learning_rate=50.0, epochs=20), init=True)
    assert exc.value.epoch is not None and exc.value.batch is not None


def test_balance_is_attached():
    data = sample_mixture(make_synthetic_mixture(4, 4), 400, 0)
    trace = sgd_train(linear(4, 4), data, TrainConfig(epochs=2), init=True)
    losses = loss(trace.network, data.X, data.y, LossKind.NLL)
    expected = label_balance(losses, data.y, 4)
    assert trace.balance.across_label_std == pytest.approx(expected.across_label_std)
    assert trace.balance.per_label_mean.shape == (4,)


def test_prior_sweep_zero_variance_exact():
    mix = make_synthetic_mixture(10, 20)
    rows = prior_sweep_stats(mlp_by_depth(20, 10, 2), [0.0, 0.01], mix, n_prior=4, n_data=256)
    assert rows[0].mean_loss == pytest.approx(math.log(10), rel=1e-15)
    assert rows[0].mean_grad_sq == 0.0
    assert rows[1].mean_grad_sq > 0.0
    with pytest.raises(InvalidInputError):
        prior_sweep_stats(linear(2, 2), [], mix)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_deeper_nets_have_smaller_gradients(seed):
    mix = make_synthetic_mixture(10, 20)
    g = [
        prior_sweep_stats(mlp_by_depth(20, 10, depth), [0.01], mix, n_prior=32, n_data=1024, seed=seed)[0].mean_grad_sq
        for depth in (1, 2, 3)
    ]
    assert g[0] > g[1] > g[2]


def test_depth_sweep_zero_gradient_family():
    mix = make_synthetic_mixture(10, 4)
    inp = BoundInput(lam=100.0, m=100, delta=0.01, prior_var=1e-300, n_prior=4, n_data=64)
    rows, monotone = depth_sweep_complexity([1, 2], mix, inp)
    assert all(r.complexity == 0.0 for r in rows) and monotone


def test_depth_sweep_single_depth_matches_direct():
    mix = make_synthetic_mixture(10, 20)
    inp = BoundInput(lam=1000.0, m=1000, delta=0.01, prior_var=0.01, n_prior=8, n_data=512, seed=4)
    rows, _ = depth_sweep_complexity([2], mix, inp)
    direct = per_w_complexity(mlp_by_depth(20, 10, 2), 0.01, mix, inp).value
    assert rows[0].complexity == direct


def test_depth_sweep_parallel_matches_serial():
    mix = make_synthetic_mixture(10, 20)
    inp = BoundInput(lam=1000.0, m=1000, delta=0.01, prior_var=0.01, n_prior=8, n_data=512, seed=4)
    serial, _ = depth_sweep_complexity([1, 2, 3], mix, inp)
    parallel, _ = depth_sweep_complexity([1, 2, 3], mix, inp, workers=3)
    assert [r.complexity for r in serial] == [r.complexity for r in parallel]
