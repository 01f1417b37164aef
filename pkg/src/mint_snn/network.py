"""Network topology descriptors, spike records, and the VGG shape catalog."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import ShapeError, conv_output_size

WEIGHTED = ("conv", "linear")
POOLS = ("maxpool", "avgpool")


@dataclass(eq=False)
class LayerSpec:
    """One layer of a feed-forward SNN.

    ``weight_shape`` is OIHW for ``conv`` and ``(out, in)`` for ``linear``;
    pooling layers carry only ``window``/``stride``. ``weight`` may be left
    ``None`` for shape-only analysis.
    """

    kind: str
    weight_shape: tuple = ()
    stride: int = 1
    padding: int = 0
    window: int = 0
    weight: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in WEIGHTED + POOLS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.weight_shape = tuple(int(d) for d in self.weight_shape)
        if self.weight is not None and tuple(self.weight.shape) != self.weight_shape:
            raise ShapeError(f"weight shape {self.weight.shape} != declared {self.weight_shape}")

    @property
    def weighted(self) -> bool:
        return self.kind in WEIGHTED

    @property
    def n_params(self) -> int:
        return int(np.prod(self.weight_shape)) if self.weighted else 0

    def with_weight(self, weight: np.ndarray | None) -> "LayerSpec":
        return LayerSpec(self.kind, self.weight_shape, self.stride, self.padding, self.window, weight)

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        same_meta = (self.kind, self.weight_shape, self.stride, self.padding, self.window) == (
            other.kind, other.weight_shape, other.stride, other.padding, other.window)
        if not same_meta or (self.weight is None) != (other.weight is None):
            return False
        if self.weight is None:
            return True
        return self.weight.dtype == other.weight.dtype and np.array_equal(self.weight, other.weight)


def conv(out_ch: int, in_ch: int, k: int = 3, stride: int = 1, padding: int = 1, weight=None) -> LayerSpec:
    return LayerSpec("conv", (out_ch, in_ch, k, k), stride=stride, padding=padding, weight=weight)


def linear(out_f: int, in_f: int, weight=None) -> LayerSpec:
    return LayerSpec("linear", (out_f, in_f), weight=weight)


def maxpool(window: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", stride=window if stride is None else stride, window=window)


def avgpool(window: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec("avgpool", stride=window if stride is None else stride, window=window)


@dataclass(eq=False)
class NetworkSpec:
    """Topologically ordered layers applied to a ``(C, H, W)`` input.

    The first layer must carry weights (it consumes the analog input) and the
    last weighted layer is the accumulate-only readout.
    """

    input_shape: tuple
    layers: list = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if not self.layers:
            raise ValueError("network has no layers")
        if not self.layers[0].weighted:
            raise ValueError("the first layer must be conv or linear")
        if not self.layers[-1].weighted:
            raise ValueError("the last layer must be conv or linear")
        self.output_shapes()

    def output_shapes(self) -> list[tuple]:
        """Per-layer output shape (without batch); validates the chain."""
        shapes = []
        cur = self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                o, c, kh, kw = layer.weight_shape
                if len(cur) != 3 or cur[0] != c:
                    raise ShapeError(f"layer {i}: conv expects {c} channels, input is {cur}")
                cur = (o, conv_output_size(cur[1], kh, layer.stride, layer.padding),
                       conv_output_size(cur[2], kw, layer.stride, layer.padding))
            elif layer.kind == "linear":
                o, n_in = layer.weight_shape
                if int(np.prod(cur)) != n_in:
                    raise ShapeError(f"layer {i}: linear expects {n_in} features, input has {int(np.prod(cur))}")
                cur = (o,)
            else:
                if len(cur) != 3:
                    raise ShapeError(f"layer {i}: pooling needs a CHW input, got {cur}")
                if layer.window > cur[1] or layer.window > cur[2]:
                    raise ShapeError(f"layer {i}: pool window {layer.window} larger than {cur[1:]}")
                cur = (cur[0], (cur[1] - layer.window) // layer.stride + 1,
                       (cur[2] - layer.window) // layer.stride + 1)
            shapes.append(cur)
        return shapes

    @property
    def weighted_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.weighted]

    @property
    def output_index(self) -> int:
        return len(self.layers) - 1

    @property
    def spiking_indices(self) -> list[int]:
        """Weighted layers with LIF neurons (everything but the readout)."""
        return self.weighted_indices[:-1]

    def neuron_counts(self) -> list[int]:
        """Neurons (membrane slots per sample) for each weighted layer."""
        shapes = self.output_shapes()
        return [int(np.prod(shapes[i])) for i in self.weighted_indices]

    def param_counts(self) -> list[int]:
        return [self.layers[i].n_params for i in self.weighted_indices]

    def has_weights(self) -> bool:
        return all(self.layers[i].weight is not None for i in self.weighted_indices)

    def with_weights(self, weights: list) -> "NetworkSpec":
        it = iter(weights)
        layers = [layer.with_weight(next(it)) if layer.weighted else layer.with_weight(None)
                  for layer in self.layers]
        return NetworkSpec(self.input_shape, layers)

    def weights(self) -> list:
        return [self.layers[i].weight for i in self.weighted_indices]

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return self.input_shape == other.input_shape and len(self.layers) == len(other.layers) and all(
            a == b for a, b in zip(self.layers, other.layers))


def init_weights(net: NetworkSpec, rng: np.random.Generator, gain: float = 1.0) -> NetworkSpec:
    """He-uniform initialisation, bias-free."""
    weights = []
    for i in net.weighted_indices:
        shape = net.layers[i].weight_shape
        fan_in = int(np.prod(shape[1:]))
        bound = gain * np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=shape))
    return net.with_weights(weights)


@dataclass
class SpikeState:
    """Unary spike planes of every spiking layer.

    ``spikes[k]`` has shape ``(T, B, *neuron_shape)`` with values in {0, 1}
    and belongs to network layer ``layer_indices[k]``.
    """

    spikes: list
    layer_indices: list

    @property
    def timesteps(self) -> int:
        return self.spikes[0].shape[0] if self.spikes else 0

    @property
    def batch(self) -> int:
        return self.spikes[0].shape[1] if self.spikes else 0

    def total_spikes(self) -> int:
        return int(sum(int(s.sum()) for s in self.spikes))

    def slots(self) -> int:
        return int(sum(s.size for s in self.spikes))

    def neurons(self) -> int:
        return int(sum(int(np.prod(s.shape[2:])) for s in self.spikes))

    def complement(self) -> "SpikeState":
        return SpikeState([(1 - s).astype(s.dtype) for s in self.spikes], list(self.layer_indices))

    def equals(self, other: "SpikeState") -> bool:
        return self.layer_indices == other.layer_indices and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.spikes, other.spikes))

    def mismatches(self, other: "SpikeState") -> int:
        """Number of differing spike slots (shape disagreement counts all)."""
        if self.layer_indices != other.layer_indices:
            return max(self.slots(), other.slots())
        total = 0
        for a, b in zip(self.spikes, other.spikes):
            total += a.size if a.shape != b.shape else int(np.count_nonzero(a != b))
        return total


_VGG_CFG = {
    "vgg9": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M"],
    "vgg16": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"],
}
_DATASETS = {"cifar10": (32, 10), "tinyimagenet": (64, 200)}


def vgg(depth: str, dataset: str) -> NetworkSpec:
    """Shape-only VGG descriptor.

    VGG-9 ends in a 1024-unit hidden classifier before the readout; VGG-16 ends
    in a single readout layer over the flattened final feature map.
    """
    side, classes = _DATASETS[dataset]
    layers = []
    ch = 3
    for item in _VGG_CFG[depth]:
        if item == "M":
            layers.append(maxpool(2))
            side //= 2
        else:
            layers.append(conv(item, ch, 3, 1, 1))
            ch = item
    flat = ch * side * side
    if depth == "vgg9":
        layers += [linear(1024, flat), linear(classes, 1024)]
    else:
        layers.append(linear(classes, flat))
    return NetworkSpec((3, _DATASETS[dataset][0], _DATASETS[dataset][0]), layers)


ARCHITECTURES = {
    f"{d}-{ds}": (d, ds) for d in _VGG_CFG for ds in _DATASETS
}


def architecture(name: str) -> NetworkSpec:
    try:
        depth, dataset = ARCHITECTURES[name]
    except KeyError:
        raise KeyError(f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}") from None
    return vgg(depth, dataset)
