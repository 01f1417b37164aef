import math

import numpy as np
import pytest

from mint_snn import trainer as tr
from mint_snn.datasets import synthetic_blobs
from mint_snn.lif_reference import LifConfig, run_network_float
from mint_snn.quantizer import EPS_ALPHA, QuantParams

import gradcheck
from conftest import small_conv_net, small_mlp, uniform_input


def test_surrogate_shape():
    x = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0])
    assert tr.surrogate_spike_grad(x).tolist() == [0.0, 0.0, 0.5, 1.0, 0.5, 0.0, 0.0]
    assert tr.soft_step(np.array([-1.0, 0.0, 1.0])).tolist() == [0.0, 0.5, 1.0]


def test_soft_step_derivative_is_the_surrogate():
    x = np.linspace(-1.3, 1.3, 27) + 0.013
    h = 1e-7
    fd = (tr.soft_step(x + h) - tr.soft_step(x - h)) / (2 * h)
    assert np.allclose(fd, tr.surrogate_spike_grad(x), atol=1e-6)


def test_leak_shift_requires_power_of_two_tau():
    assert tr.leak_shift_for(0.5) == 1
    assert tr.leak_shift_for(1.0) == 0
    assert tr.leak_shift_for(0.125) == 3
    with pytest.raises(ValueError):
        tr.leak_shift_for(0.3)


def test_cross_entropy_by_hand():
    loss, d = tr.cross_entropy(np.array([[0.0, 0.0], [0.0, math.log(3.0)]]), np.array([0, 1]))
    assert loss == pytest.approx((math.log(2) + math.log(4 / 3)) / 2)
    assert np.allclose(d, [[-0.25, 0.25], [0.125, -0.125]])


@pytest.mark.parametrize("reset", ["hard", "soft"])
def test_full_precision_simulation_is_the_float_reference(any_net, reset):
    cfg = LifConfig(0.5, 0.5, reset, 5)
    x = uniform_input(any_net)
    logits, cache = tr.forward_simulated(any_net, x, cfg)
    ref_logits, ref = run_network_float(any_net, x, cfg)
    assert cache.record.equals(ref)
    assert np.array_equal(logits, ref_logits)


def test_quantization_parameters_must_match_the_lif_config():
    net = small_mlp()
    qps = [QuantParams.for_threshold(0.1, 4, 4, 0.5, reset="soft") for _ in net.weighted_indices]
    with pytest.raises(ValueError):
        tr.forward_simulated(net, uniform_input(net), LifConfig(reset="hard"), qps)
    with pytest.raises(ValueError):
        tr.forward_simulated(net, uniform_input(net), LifConfig(reset="soft"), qps[:1])


def test_backward_matches_finite_differences():
    worst, _ = gradcheck.check_trials(20)
    assert worst <= 1e-3


def test_gradient_network_is_small():
    assert gradcheck.param_count(gradcheck.tiny_net(np.random.default_rng(0))) <= 20


def test_adam_first_step_moves_by_learning_rate():
    opt = tr.Adam(0.01)
    out = opt.step({"a": np.array([1.0, 1.0]), "b": 2.0}, {"a": np.array([3.0, -0.5]), "b": -1.0})
    assert out["a"] == pytest.approx([0.99, 1.01])
    assert out["b"] == pytest.approx(2.01)


def test_training_reduces_loss_and_is_deterministic():
    ds = synthetic_blobs(n=400, seed=3)
    train_set, test_set = ds.split(0.25)
    cfg = tr.TrainConfig(epochs=3, n_w=4, n_u=4, seed=11)
    _, a = tr.train(train_set, cfg, test_set)
    _, b = tr.train(train_set, cfg, test_set)
    assert a == b
    assert a[-1]["loss"] < a[0]["loss"]
    _, c = tr.train(train_set, tr.TrainConfig(epochs=3, n_w=4, n_u=4, seed=12), test_set)
    assert c != a


def test_scales_stay_positive_and_thresholds_track_them():
    ds = synthetic_blobs(n=200, seed=1)
    cfg = tr.TrainConfig(epochs=1, n_w=2, n_u=2, learning_rate=0.05)
    state, _ = tr.train(ds, cfg)
    for qp in state.qparams:
        assert qp.alpha >= EPS_ALPHA
        assert qp == qp.with_alpha(qp.alpha, cfg.v_th)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    net = small_conv_net()
    weights = net.weights()
    weights[-1] = np.full_like(weights[-1], np.inf)
    cfg = tr.TrainConfig()
    state = tr.make_state(net.with_weights(weights), cfg)
    with pytest.raises(tr.TrainingDiverged):
        tr.train_step(state, uniform_input(net), np.array([0, 1, 2]), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(n_w=4)
    with pytest.raises(ValueError):
        tr.TrainConfig(reset="none")
    with pytest.raises(ValueError):
        tr.TrainConfig(epochs=0)


def test_desk_network_shape():
    net = tr.desk_network((1, 4, 4), 4)
    assert [l.kind for l in net.layers] == ["conv", "conv", "maxpool", "linear"]
    assert net.output_shapes()[-1] == (4,)
