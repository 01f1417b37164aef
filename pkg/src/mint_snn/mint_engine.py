"""Multiplier-less integer inference.

Hidden layers consume unary spikes, so the synaptic input is a sum of selected
integer weights. The membrane update, threshold compare, leak (arithmetic
right shift) and the saturating store are all integer operations.

The first layer sees the analog input quantized to 8-bit unsigned fixed point
(scale 1/255). It performs a real integer MAC and one rounding division by 255
to land on the membrane grid; that layer is the only one that multiplies.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .network import NetworkSpec, SpikeState
from .quantizer import QuantParams, compute_alpha, quantize_weights

INPUT_LEVELS = 255


class StateRangeError(ValueError):
    """A stored membrane potential lies outside its n_u-bit range."""


class MissingQuantParams(ValueError):
    pass


@dataclass(eq=False)
class MintLayer:
    kind: str
    w_hat: np.ndarray | None = None
    qp: QuantParams | None = None
    stride: int = 1
    padding: int = 0
    window: int = 0

    def __post_init__(self):
        if self.w_hat is not None and self.qp is not None:
            lim = tc.qmax(self.qp.n_w)
            if self.w_hat.size and np.abs(self.w_hat.astype(np.int64)).max() > lim:
                raise ValueError(f"integer weights exceed the {self.qp.n_w}-bit range")

    def __eq__(self, other):
        if not isinstance(other, MintLayer):
            return NotImplemented
        if (self.kind, self.qp, self.stride, self.padding, self.window) != (
                other.kind, other.qp, other.stride, other.padding, other.window):
            return False
        if (self.w_hat is None) != (other.w_hat is None):
            return False
        return self.w_hat is None or np.array_equal(self.w_hat, other.w_hat)


@dataclass(eq=False)
class MintNetwork:
    input_shape: tuple
    layers: list
    v_th: float = 0.5

    @property
    def weighted_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind in ("conv", "linear")]

    @property
    def spiking_indices(self) -> list[int]:
        return self.weighted_indices[:-1]

    def as_spec(self) -> NetworkSpec:
        """Float network holding the dequantized weights ``alpha * w_hat``."""
        from .network import LayerSpec
        layers = []
        for layer in self.layers:
            w = None if layer.w_hat is None else layer.qp.alpha * layer.w_hat.astype(np.float64)
            shape = () if w is None else w.shape
            layers.append(LayerSpec(layer.kind, shape, layer.stride, layer.padding, layer.window, w))
        return NetworkSpec(self.input_shape, layers)

    def qparams(self) -> list:
        return [layer.qp for layer in self.layers if layer.kind in ("conv", "linear")]

    def __eq__(self, other):
        if not isinstance(other, MintNetwork):
            return NotImplemented
        return (tuple(self.input_shape) == tuple(other.input_shape) and self.v_th == other.v_th
                and len(self.layers) == len(other.layers)
                and all(a == b for a, b in zip(self.layers, other.layers)))


@dataclass
class OpCounter:
    """Per-layer tallies of the arithmetic the engine performed."""

    records: dict = field(default_factory=lambda: defaultdict(
        lambda: {"adds": 0, "compares": 0, "shifts": 0, "multiplies": 0}))

    def add(self, layer: int, **counts):
        rec = self.records[layer]
        for k, v in counts.items():
            rec[k] += int(v)

    def as_dict(self) -> dict:
        return {k: dict(v) for k, v in sorted(self.records.items())}


def _select_sum(active: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """``out[b, o, l] = sum of w2[o, j] over j where active[b, l, j]``."""
    b, l, _ = active.shape
    o = w2.shape[0]
    out = np.empty((b, o, l), dtype=np.int64)
    chunk = max(1, (1 << 22) // max(1, w2.size) // max(1, l))
    for start in range(0, b, chunk):
        sel = np.where(active[start:start + chunk, None, :, :], w2[None, :, None, :], 0)
        out[start:start + chunk] = sel.sum(axis=-1, dtype=np.int64)
    return out


def accumulate_spikes(layer: MintLayer, s_in: np.ndarray) -> np.ndarray:
    """Integer synaptic input for unary inputs: select-and-add, no products."""
    active = s_in.astype(bool)
    w = layer.w_hat.astype(np.int64)
    batch = s_in.shape[0]
    if layer.kind == "linear":
        flat = active.reshape(batch, 1, -1)
        if flat.shape[2] != w.shape[1]:
            raise tc.ShapeError(f"input features {flat.shape[2]} != fan-in {w.shape[1]}")
        acc = _select_sum(flat, w)[:, :, 0]
    else:
        o, _, kh, kw = w.shape
        cols, oh, ow = tc.im2col(active, kh, kw, layer.stride, layer.padding)
        acc = _select_sum(cols, w.reshape(o, -1)).reshape(batch, o, oh, ow)
    return tc._check_int32(acc)


def _count_accumulate(counter: OpCounter, index: int, layer: MintLayer, s_in: np.ndarray):
    active = s_in.astype(bool)
    if layer.kind == "linear":
        adds = int(active.sum()) * layer.w_hat.shape[0]
    else:
        o, _, kh, kw = layer.w_hat.shape
        cols, _, _ = tc.im2col(active, kh, kw, layer.stride, layer.padding)
        adds = int(cols.sum()) * o
    counter.add(index, adds=adds)


def _check_state(u: np.ndarray, qp: QuantParams):
    lim = tc.qmax(qp.n_u)
    if u.size and (u.min() < -lim or u.max() > lim):
        raise StateRangeError(f"membrane state outside the {qp.n_u}-bit range +-{lim}")


def integer_lif(h: np.ndarray, qp: QuantParams):
    """Fire on ``h >= theta``; reset, leak by right shift, saturate."""
    fire = h >= qp.theta
    if qp.reset == "hard":
        kept = np.right_shift(h, qp.leak_shift)
        u_next = np.where(fire, 0, tc.saturating_cast(kept, qp.n_u))
    else:
        u_next = tc.saturating_cast(np.right_shift(np.where(fire, h - qp.theta, h), qp.leak_shift), qp.n_u)
    return fire.astype(np.uint8), u_next.astype(np.int32)


def mint_step(layer: MintLayer, s_in: np.ndarray, u_prev: np.ndarray, counter: OpCounter | None = None,
              index: int = 0):
    """One timestep of a hidden MINT layer: ``(spikes, next_state)``."""
    if layer.qp is None:
        raise MissingQuantParams("layer has no quantization parameters")
    _check_state(u_prev, layer.qp)
    x = accumulate_spikes(layer, s_in)
    h = x + u_prev
    s_out, u_next = integer_lif(h, layer.qp)
    if counter is not None:
        _count_accumulate(counter, index, layer, s_in)
        counter.add(index, adds=h.size, compares=h.size, shifts=h.size)
    return s_out, u_next


def quantize_input(x: np.ndarray) -> np.ndarray:
    """Analog pixels in [0, 1] to 8-bit unsigned codes (scale 1/255)."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return tc.round_half_away(x * INPUT_LEVELS).astype(np.int32)


def _mac(layer: MintLayer, x_q: np.ndarray) -> np.ndarray:
    w = layer.w_hat.astype(np.int32)
    if layer.kind == "conv":
        return tc.conv2d(x_q, w, layer.stride, layer.padding)
    return tc.linear(x_q, w)


def _rescale_input(acc: np.ndarray) -> np.ndarray:
    """``round(acc / 255)`` in integer arithmetic (255 is odd, so no ties)."""
    mag = (np.abs(acc.astype(np.int64)) + INPUT_LEVELS // 2) // INPUT_LEVELS
    return (np.sign(acc) * mag).astype(np.int32)


def _count_mac(counter: OpCounter, index: int, layer: MintLayer, x_q: np.ndarray, out_size: int):
    fan_in = int(np.prod(layer.w_hat.shape[1:]))
    counter.add(index, multiplies=out_size * fan_in, adds=out_size * fan_in)


def mint_forward(net: MintNetwork, x: np.ndarray, timesteps: int, counter: OpCounter | None = None):
    """Integer inference over ``timesteps`` steps of direct-encoded input.

    Returns ``(logits, spike_record)``. The readout accumulates its integer
    synaptic input in 32 bits; logits are that sum times the readout's
    ``alpha`` divided by ``timesteps`` (and by 255 when the readout is also the
    input layer).
    """
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    weighted = net.weighted_indices
    if not weighted:
        raise ValueError("network has no weighted layers")
    for i in weighted:
        if net.layers[i].qp is None or net.layers[i].w_hat is None:
            raise MissingQuantParams(f"layer {i} is missing quantization parameters")
    out_idx = weighted[-1]
    if out_idx != len(net.layers) - 1:
        raise ValueError("the last layer must be the weighted readout")
    first = weighted[0]
    x_q = quantize_input(x)
    b = x_q.shape[0]

    states: dict = {}
    record: dict = {i: [] for i in net.spiking_indices}
    acc = None
    for _t in range(timesteps):
        inp = x_q
        for i, layer in enumerate(net.layers):
            if layer.kind == "maxpool":
                inp = tc.pool2d(inp, layer.window, layer.stride, "max")
                continue
            if layer.kind not in ("conv", "linear"):
                raise ValueError(f"layer {i}: {layer.kind} has no integer rule")
            if i == first:
                mac = _mac(layer, inp)
                if counter is not None:
                    _count_mac(counter, i, layer, inp, mac.size)
                if i == out_idx:
                    acc = mac.astype(np.int64) if acc is None else acc + mac
                    continue
                syn = _rescale_input(mac)
                u = states.get(i, np.zeros(syn.shape, dtype=np.int32))
                _check_state(u, layer.qp)
                h = syn + u
                s, states[i] = integer_lif(h, layer.qp)
                if counter is not None:
                    counter.add(i, adds=h.size, compares=h.size, shifts=h.size, multiplies=h.size)
            elif i == out_idx:
                syn = accumulate_spikes(layer, inp)
                if counter is not None:
                    _count_accumulate(counter, i, layer, inp)
                acc = syn.astype(np.int64) if acc is None else acc + syn
                continue
            else:
                u = states.get(i)
                if u is None:
                    u = np.zeros((b,) + _out_shape(layer, inp), dtype=np.int32)
                s, states[i] = mint_step(layer, inp, u, counter, i)
            record[i].append(s)
            inp = s
        tc._check_int32(acc)

    qp_out = net.layers[out_idx].qp
    denom = timesteps * (INPUT_LEVELS if out_idx == first else 1)
    logits = (qp_out.alpha * acc.astype(np.float64) / denom).reshape(b, -1)
    idx = net.spiking_indices
    return logits, SpikeState([np.stack(record[i]) for i in idx], idx)


def _out_shape(layer: MintLayer, inp: np.ndarray) -> tuple:
    if layer.kind == "linear":
        return (layer.w_hat.shape[0],)
    o, _, kh, kw = layer.w_hat.shape
    return (o, tc.conv_output_size(inp.shape[2], kh, layer.stride, layer.padding),
            tc.conv_output_size(inp.shape[3], kw, layer.stride, layer.padding))


def quantize_network(float_net: NetworkSpec, n_w: int, n_u: int, v_th: float, alphas: list | None = None,
                     reset: str = "hard", leak_shift: int = 1) -> MintNetwork:
    """Post-training (or post-QAT) conversion to an integer network.

    Each weighted layer gets one shared ``alpha``: the supplied trained value
    or :func:`compute_alpha` of its weights. Only max pooling passes through;
    average pooling of spikes is not unary and is rejected.
    """
    for name, bits in (("n_w", n_w), ("n_u", n_u)):
        if not 2 <= bits <= 8:
            raise ValueError(f"{name} must be in [2, 8] for integer deployment, got {bits}")
    if not float_net.has_weights():
        raise ValueError("network has weighted layers without weights")
    weighted = float_net.weighted_indices
    if alphas is not None and len(alphas) != len(weighted):
        raise ValueError(f"expected {len(weighted)} alphas, got {len(alphas)}")
    layers = []
    k = 0
    for i, layer in enumerate(float_net.layers):
        if layer.kind == "maxpool":
            layers.append(MintLayer("maxpool", stride=layer.stride, window=layer.window))
            continue
        if not layer.weighted:
            raise ValueError(f"layer {i} ({layer.kind}) has no weights and no integer pass-through rule")
        alpha = compute_alpha(layer.weight, n_w) if alphas is None else float(alphas[k])
        k += 1
        qp = QuantParams.for_threshold(alpha, n_w, n_u, v_th, reset=reset, leak_shift=leak_shift)
        w_hat = quantize_weights(layer.weight, qp.alpha, n_w).astype(np.int8)
        layers.append(MintLayer(layer.kind, w_hat, qp, layer.stride, layer.padding))
    return MintNetwork(float_net.input_shape, layers, v_th=float(v_th))
