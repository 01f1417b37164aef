import numpy as np
import pytest

from mint_snn import network as nw
from mint_snn.tensor_core import ShapeError, make_rng

# conv stack of the standard VGG-16 has 14,714,688 parameters with biases, 4,224 of them biases
VGG16_CONV_WEIGHTS = 14_714_688 - 4_224


def test_vgg16_parameter_counts():
    for name, classes, side in (("vgg16-cifar10", 10, 1), ("vgg16-tinyimagenet", 200, 2)):
        net = nw.architecture(name)
        assert sum(net.param_counts()) == VGG16_CONV_WEIGHTS + 512 * side * side * classes


def test_vgg_shapes():
    net = nw.architecture("vgg9-cifar10")
    assert net.output_shapes()[-1] == (10,)
    assert net.neuron_counts()[0] == 64 * 32 * 32
    assert net.neuron_counts()[-2:] == [1024, 10]
    with pytest.raises(KeyError):
        nw.architecture("resnet")


def test_network_validation():
    with pytest.raises(ValueError):
        nw.NetworkSpec((1, 4, 4), [])
    with pytest.raises(ValueError):
        nw.NetworkSpec((1, 4, 4), [nw.maxpool(2), nw.linear(2, 4)])
    with pytest.raises(ValueError):
        nw.NetworkSpec((1, 4, 4), [nw.conv(2, 1), nw.maxpool(2)])
    with pytest.raises(ShapeError):
        nw.NetworkSpec((1, 4, 4), [nw.conv(2, 3), nw.linear(2, 32)])
    with pytest.raises(ShapeError):
        nw.NetworkSpec((1, 4, 4), [nw.conv(2, 1), nw.linear(2, 31)])
    with pytest.raises(ShapeError):
        nw.linear(2, 3, weight=np.zeros((3, 2)))
    with pytest.raises(ValueError):
        nw.LayerSpec("dropout")


def test_weights_and_equality():
    net = nw.NetworkSpec((1, 1, 4), [nw.linear(3, 4), nw.linear(2, 3)])
    assert not net.has_weights()
    a = nw.init_weights(net, make_rng(0))
    b = nw.init_weights(net, make_rng(0))
    assert a.has_weights() and a == b
    assert a != nw.init_weights(net, make_rng(1))
    bound = np.sqrt(6.0 / 4)
    assert np.abs(a.weights()[0]).max() <= bound
    assert a != a.with_weights([w.astype(np.float32) for w in a.weights()])


def test_spike_state_counts():
    rec = nw.SpikeState([np.array([[[1, 0, 0]], [[0, 1, 1]]], dtype=np.uint8)], [0])
    assert (rec.timesteps, rec.batch, rec.neurons(), rec.slots(), rec.total_spikes()) == (2, 1, 3, 6, 3)
    assert rec.complement().total_spikes() == 3
    other = nw.SpikeState([np.zeros((2, 1, 3), dtype=np.uint8)], [0])
    assert rec.mismatches(other) == 3
    assert rec.mismatches(nw.SpikeState([], [])) == 6
