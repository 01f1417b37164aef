"""Randomised agreement check between the integer engine and simulated quantization.

Each seed draws a small MLP or conv network, a bit-width, a reset mode, a leak
and a way of choosing the shared scales, then compares the spike trains of
:func:`mint_forward` against the float :func:`forward_simulated` pass that
uses the same scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from .lif_reference import LifConfig
from .mint_engine import MintNetwork, mint_forward, quantize_network
from .quantizer import compute_alpha
from .tensor_core import make_rng
from .trainer import forward_simulated

MAX_NEURONS = 64
ALPHA_MODES = ("max", "random", "tie", "exact")


@dataclass
class EquivalenceCase:
    seed: int
    float_net: nw.NetworkSpec
    mint_net: MintNetwork
    x: np.ndarray
    lif: LifConfig
    alpha_mode: str


@dataclass
class EquivalenceResult:
    networks: int = 0
    mismatches: int = 0
    spike_bits: int = 0
    failing_seeds: list = field(default_factory=list)


def _random_mlp(rng) -> nw.NetworkSpec:
    depth = int(rng.integers(1, 5))
    width = int(rng.integers(1, MAX_NEURONS + 1))
    layers, fan_in = [], width
    for _ in range(depth - 1):
        out = int(rng.integers(1, MAX_NEURONS + 1))
        layers.append(nw.linear(out, fan_in))
        fan_in = out
    layers.append(nw.linear(int(rng.integers(2, 11)), fan_in))
    return nw.NetworkSpec((1, 1, width), layers)


def _random_conv(rng) -> nw.NetworkSpec:
    side = int(rng.integers(3, 7))
    channels = int(rng.integers(1, 3))
    layers, c, s = [], channels, side
    for _ in range(int(rng.integers(1, 3))):
        k = int(rng.choice([1, 3]))
        out = int(rng.integers(1, max(2, MAX_NEURONS // (s * s)) + 1))
        out = min(out, MAX_NEURONS // (s * s)) or 1
        layers.append(nw.conv(out, c, k, 1, k // 2))
        c = out
        if s >= 4 and rng.random() < 0.5:
            layers.append(nw.maxpool(2))
            s //= 2
    layers.append(nw.linear(int(rng.integers(2, 11)), c * s * s))
    return nw.NetworkSpec((channels, side, side), layers)


def _alphas(net, mode, n, v_th, rng) -> list:
    weights = [net.layers[i].weight for i in net.weighted_indices]
    if mode == "max":
        return [compute_alpha(w, n) for w in weights]
    if mode == "random":
        return [float(np.abs(w).max() * rng.uniform(0.05, 1.0) / ((1 << (n - 1)) - 1)) for w in weights]
    # thresholds on or near the integer grid: v_th / alpha is an integer m
    return [v_th / int(rng.integers(1, 1 << (n - 1))) for _ in weights]


def random_case(seed: int) -> EquivalenceCase:
    rng = make_rng(seed)
    net = _random_conv(rng) if rng.random() < 0.5 else _random_mlp(rng)
    net = nw.init_weights(net, rng, gain=float(rng.uniform(0.5, 3.0)))
    n = int(rng.choice([2, 4, 8]))
    reset = str(rng.choice(["hard", "soft"]))
    leak_shift = int(rng.integers(0, 3))
    mode = ALPHA_MODES[int(rng.integers(len(ALPHA_MODES)))]
    if mode == "exact":
        # power-of-two scale so alpha * m == v_th holds exactly in floating point
        j = int(rng.integers(1, 6))
        v_th = int(rng.integers(1, 1 << (n - 1))) * 2.0 ** -j
    else:
        v_th = float(rng.uniform(0.2, 1.5))
    alphas = [2.0 ** -j for _ in net.weighted_indices] if mode == "exact" else _alphas(net, mode, n, v_th, rng)
    mint = quantize_network(net, n, n, v_th, alphas=alphas, reset=reset, leak_shift=leak_shift)
    lif = LifConfig(v_th=v_th, tau=2.0 ** -leak_shift, reset=reset, timesteps=int(rng.integers(1, 9)))
    x = rng.uniform(0.0, 1.0, size=(int(rng.integers(1, 5)),) + net.input_shape)
    return EquivalenceCase(seed, net, mint, x, lif, mode)


def check_case(case: EquivalenceCase) -> tuple[int, int]:
    """Return (mismatching spike bits, total spike bits)."""
    _, engine = mint_forward(case.mint_net, case.x, case.lif.timesteps)
    _, cache = forward_simulated(case.float_net, case.x, case.lif, qparams=case.mint_net.qparams())
    return engine.mismatches(cache.record), engine.slots()


def run_equivalence(seeds: int, start: int = 0) -> EquivalenceResult:
    result = EquivalenceResult()
    for seed in range(start, start + seeds):
        bad, bits = check_case(random_case(seed))
        result.networks += 1
        result.mismatches += bad
        result.spike_bits += bits
        if bad:
            result.failing_seeds.append(seed)
    return result
