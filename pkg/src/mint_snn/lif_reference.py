"""Floating-point LIF dynamics and the naive uniform-quantized variant.

Both are reference paths: the integer engine and the training forward are
checked against them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .network import NetworkSpec, SpikeState

RESET_MODES = ("hard", "soft")


@dataclass(frozen=True)
class LifConfig:
    v_th: float = 0.5
    tau: float = 0.5
    reset: str = "hard"
    timesteps: int = 4

    def __post_init__(self):
        if not self.v_th > 0:
            raise ValueError("v_th must be positive")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.reset not in RESET_MODES:
            raise ValueError(f"reset must be one of {RESET_MODES}")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")


def synaptic_input(weight: np.ndarray, s_in: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """``W * S``: convolution for OIHW weights, dense product otherwise."""
    if weight.ndim == 4:
        return tc.conv2d(s_in, weight, stride, padding)
    return tc.linear(s_in, weight)


def lif_update(x: np.ndarray, u_prev: np.ndarray, cfg: LifConfig):
    """Membrane update, firing and reset for a precomputed synaptic input."""
    if x.shape != u_prev.shape:
        raise tc.ShapeError(f"synaptic input {x.shape} does not match state {u_prev.shape}")
    h = x + u_prev
    s = (h > cfg.v_th).astype(np.float64)
    if cfg.reset == "hard":
        u_next = cfg.tau * h * (1.0 - s)
    else:
        u_next = cfg.tau * (h - s * cfg.v_th)
    return s, u_next


def lif_step_float(weight, s_in, u_prev, cfg: LifConfig, stride: int = 1, padding: int = 0):
    """One timestep of the float LIF layer; returns ``(spikes, next_state)``."""
    return lif_update(synaptic_input(weight, s_in, stride, padding), u_prev, cfg)


def lif_step_naive_uq(w_hat, alphas, s_in, u_hat_prev, cfg: LifConfig, stride: int = 1,
                      padding: int = 0, rounding: bool = True):
    """Naive uniform-quantized LIF step with three independent scales.

    ``alphas = (a_w, a_prev, a_next)`` rescale the integer weights, the stored
    state and the new state. The pre-reset potential stays real-valued; with
    ``rounding=False`` the returned state is the unrounded real quotient.
    """
    a_w, a_prev, a_next = (float(a) for a in alphas)
    if min(a_w, a_prev, a_next) <= 0:
        raise ValueError("quantization scales must be positive")
    acc = synaptic_input(np.asarray(w_hat), s_in, stride, padding)
    h = a_w * acc + a_prev * np.asarray(u_hat_prev, dtype=np.float64)
    s = (h > cfg.v_th).astype(np.float64)
    if cfg.reset == "hard":
        target = cfg.tau * h * (1.0 - s)
    else:
        target = cfg.tau * (h - s * cfg.v_th)
    u_next = target / a_next
    if rounding:
        u_next = tc.round_half_away(u_next).astype(np.int64)
    return s, u_next


def run_network_float(net: NetworkSpec, x: np.ndarray, cfg: LifConfig):
    """Direct-encoded float inference.

    The analog input is presented to the first layer at every timestep, hidden
    layers exchange spikes, and the last layer only accumulates; the logits are
    that accumulation averaged over timesteps.
    """
    if not net.layers:
        raise ValueError("empty network")
    if not net.has_weights():
        raise ValueError("network has layers without weights")
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    shapes = net.output_shapes()
    out_idx = net.output_index
    state = {i: np.zeros((b,) + shapes[i]) for i in net.spiking_indices}
    record = {i: np.zeros((cfg.timesteps, b) + shapes[i], dtype=np.uint8) for i in net.spiking_indices}
    acc = np.zeros((b,) + shapes[out_idx])
    for t in range(cfg.timesteps):
        inp = x
        for i, layer in enumerate(net.layers):
            if layer.kind in ("maxpool", "avgpool"):
                inp = tc.pool2d(inp, layer.window, layer.stride, "max" if layer.kind == "maxpool" else "avg")
                continue
            syn = synaptic_input(layer.weight, inp, layer.stride, layer.padding)
            if i == out_idx:
                acc += syn.reshape(acc.shape)
                continue
            s, state[i] = lif_update(syn, state[i], cfg)
            record[i][t] = s
            inp = s
    logits = (acc / cfg.timesteps).reshape(b, -1)
    idx = net.spiking_indices
    return logits, SpikeState([record[i] for i in idx], idx)
