"""Quantization-aware BPTT training with hand-written gradients.

The forward pass mirrors the integer engine on a real-valued grid: weights go
through :func:`~mint_snn.quantizer.fake_quant`, the pre-activation is snapped
to the shared grid, and the stored membrane potential is re-quantized with the
same right-shift leak the engine uses. Firing is a hard threshold whose
gradient is a triangle surrogate; every rounding is straight-through.

``relaxed=True`` swaps the step for the integral of the surrogate and every
rounding for the identity. That forward is smooth almost everywhere and its
exact gradient is what :func:`backward_from_logits` computes, which is how the
backward pass is checked against finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor_core as tc
from .lif_reference import LifConfig
from .mint_engine import INPUT_LEVELS, quantize_input
from .network import NetworkSpec, SpikeState, conv, init_weights, linear, maxpool
from .quantizer import (EPS_ALPHA, QuantParams, fold_threshold, lsq_grad_scale, lsq_init_alpha,
                        membrane_index)

log = logging.getLogger(__name__)

SURROGATE_WIDTH = 1.0


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    timesteps: int = 4
    tau: float = 0.5
    v_th: float = 0.5
    reset: str = "hard"
    epochs: int = 200
    n_w: int | None = None
    n_u: int | None = None
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "timesteps", "tau", "v_th", "epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.reset not in ("hard", "soft"):
            raise ValueError("reset must be 'hard' or 'soft'")
        if (self.n_w is None) != (self.n_u is None):
            raise ValueError("set both n_w and n_u, or neither for full precision")

    @property
    def quantized(self) -> bool:
        return self.n_w is not None

    @property
    def lif(self) -> LifConfig:
        return LifConfig(self.v_th, self.tau, self.reset, self.timesteps)

    @property
    def leak_shift(self) -> int:
        return leak_shift_for(self.tau)


def leak_shift_for(tau: float) -> int:
    k = -math.log2(tau)
    if abs(k - round(k)) > 1e-12:
        raise ValueError(f"integer leak needs tau = 2**-k, got {tau}")
    return int(round(k))


def surrogate_spike_grad(x: np.ndarray, width: float = SURROGATE_WIDTH) -> np.ndarray:
    """Triangle surrogate ``max(0, 1 - |x|/width) / width``; threshold at x = 0."""
    return np.maximum(0.0, 1.0 - np.abs(x) / width) / width


def soft_step(x: np.ndarray, width: float = SURROGATE_WIDTH) -> np.ndarray:
    """Antiderivative of :func:`surrogate_spike_grad`, rising from 0 to 1."""
    z = np.clip(x / width, -1.0, 1.0)
    return np.where(z <= 0, 0.5 * (1.0 + z) ** 2, 1.0 - 0.5 * (1.0 - z) ** 2)


def desk_network(input_shape: tuple, classes: int, channels: int = 8) -> NetworkSpec:
    """Two 3x3 convolutions, an optional 2x2 max-pool, and a linear readout."""
    c, h, w = input_shape
    layers = [conv(channels, c, 3, 1, 1), conv(channels, channels, 3, 1, 1)]
    if h >= 2 and w >= 2:
        layers.append(maxpool(2))
        h, w = h // 2, w // 2
    layers.append(linear(classes, channels * h * w))
    return NetworkSpec(input_shape, layers)


def initial_qparams(net: NetworkSpec, n_w: int, n_u: int, v_th: float, reset: str = "hard",
                    leak_shift: int = 1) -> list:
    """Learnable shared scales initialised by the learned-step-size rule."""
    return [QuantParams.for_threshold(lsq_init_alpha(net.layers[i].weight, n_w), n_w, n_u, v_th,
                                      reset=reset, leak_shift=leak_shift, learnable=True)
            for i in net.weighted_indices]


@dataclass
class ForwardCache:
    net: NetworkSpec
    cfg: LifConfig
    qparams: dict | None
    relaxed: bool
    wq: dict
    steps: list
    logits: np.ndarray
    record: SpikeState


def _syn(layer, w, inp):
    if layer.kind == "conv":
        return tc.conv2d(inp, w, layer.stride, layer.padding)
    return tc.linear(inp, w)


def _syn_backward(layer, w, inp, dout):
    if layer.kind == "conv":
        return tc.conv2d_backward(dout, inp, w, layer.stride, layer.padding)
    return tc.linear_backward(dout, inp, w)


def forward_simulated(net: NetworkSpec, x: np.ndarray, cfg: LifConfig, qparams: list | None = None,
                      relaxed: bool = False):
    """Training-time forward pass; returns ``(logits, cache)``.

    ``qparams`` holds one :class:`QuantParams` per weighted layer, or ``None``
    for full precision. In the quantized path the input is the same 8-bit code
    the engine sees, divided by 255.
    """
    weighted = net.weighted_indices
    out_idx = weighted[-1]
    quant = qparams is not None
    qp_of = None
    x = np.asarray(x, dtype=np.float64)
    b = x.shape[0]
    if quant:
        if len(qparams) != len(weighted):
            raise tc.ShapeError(f"expected {len(weighted)} QuantParams, got {len(qparams)}")
        qp_of = dict(zip(weighted, qparams))
        for qp in qparams:
            if qp.reset != cfg.reset or (1 << qp.leak_shift) != 1 / cfg.tau:
                raise ValueError("QuantParams reset/leak disagree with the LIF config")
        x = quantize_input(x) / INPUT_LEVELS

    wq = {}
    for i in weighted:
        w = net.layers[i].weight
        if quant:
            qp = qp_of[i]
            s = tc.qmax(qp.n_w)
            v = np.clip(w / qp.alpha, -s, s)
            wq[i] = qp.alpha * (v if relaxed else tc.round_half_away(v))
        else:
            wq[i] = w

    shapes = net.output_shapes()
    u = {i: np.zeros((b,) + shapes[i]) for i in net.spiking_indices}
    acc = np.zeros((b,) + shapes[out_idx])
    record = {i: np.zeros((cfg.timesteps, b) + shapes[i], dtype=np.uint8) for i in net.spiking_indices}
    steps = []
    v_th = cfg.v_th
    for t in range(cfg.timesteps):
        inp = x
        step = {}
        for i, layer in enumerate(net.layers):
            if not layer.weighted:
                step[i] = {"inp": inp}
                inp = tc.pool2d(inp, layer.window, layer.stride, "max" if layer.kind == "maxpool" else "avg")
                continue
            syn = _syn(layer, wq[i], inp)
            if i == out_idx:
                step[i] = {"inp": inp}
                acc += syn.reshape(acc.shape)
                continue
            h_pre = syn + u[i]
            c = {"inp": inp, "h_pre": h_pre}
            if quant:
                qp = qp_of[i]
                if relaxed:
                    k, h = h_pre / qp.alpha, h_pre
                else:
                    k = tc.round_half_away(h_pre / qp.alpha)
                    h = qp.alpha * k
                c["k"] = k
            else:
                h = h_pre
            xn = (h - v_th) / v_th
            s = soft_step(xn) if relaxed else (h > v_th).astype(np.float64)
            if quant:
                thr = qp.theta * qp.alpha
            else:
                thr = v_th
            r = h * (1.0 - s) if cfg.reset == "hard" else h - s * thr
            if quant:
                idx, inside = membrane_index(r, qp.alpha, qp.n_u, qp.leak_shift, relaxed)
                u[i] = qp.alpha * idx
                c.update(idx=idx, inside=inside)
            else:
                u[i] = cfg.tau * r
            c.update(h=h, xn=xn, s=s, r=r, thr=thr)
            step[i] = c
            if not relaxed:
                record[i][t] = s
            inp = s
        steps.append(step)
    logits = (acc / cfg.timesteps).reshape(b, -1)
    idx = net.spiking_indices
    cache = ForwardCache(net, cfg, qp_of, relaxed, wq, steps, logits,
                         SpikeState([record[i] for i in idx], idx))
    return logits, cache


@dataclass
class Gradients:
    """Gradients per weighted layer. ``alphas`` are raw (not LSQ-scaled)."""

    weights: list
    alphas: list | None


def backward_from_logits(cache: ForwardCache, dlogits: np.ndarray) -> Gradients:
    """Backpropagate ``dL/dlogits`` through layers and timesteps."""
    net, cfg = cache.net, cache.cfg
    weighted = net.weighted_indices
    out_idx = weighted[-1]
    first = weighted[0]
    quant = cache.qparams is not None
    relaxed = cache.relaxed
    v_th = cfg.v_th
    T = cfg.timesteps
    b = dlogits.shape[0]
    out_shape = (b,) + net.output_shapes()[out_idx]
    d_acc = (np.asarray(dlogits, dtype=np.float64) / T).reshape(out_shape)

    g_wq = {i: np.zeros_like(cache.wq[i]) for i in weighted}
    g_alpha = {i: 0.0 for i in weighted}
    d_u = {i: None for i in net.spiking_indices}

    for t in reversed(range(T)):
        step = cache.steps[t]
        d = None
        for i in reversed(range(len(net.layers))):
            layer = net.layers[i]
            c = step[i]
            if not layer.weighted:
                kind = "max" if layer.kind == "maxpool" else "avg"
                d = tc.pool2d_backward(d, c["inp"], layer.window, layer.stride, kind)
                continue
            if i == out_idx:
                d_syn = d_acc
            else:
                d_s = d.reshape(c["s"].shape)
                s, h, r = c["s"], c["h"], c["r"]
                du = d_u[i] if d_u[i] is not None else np.zeros_like(h)
                if quant:
                    qp = cache.qparams[i]
                    scale = 1.0 / (1 << qp.leak_shift)
                    inside = c["inside"]
                    d_r = np.where(inside, du * scale, 0.0)
                    local = np.where(inside, c["idx"] - r / qp.alpha * scale, c["idx"])
                    if relaxed:
                        local = np.where(inside, 0.0, c["idx"])
                    g_alpha[i] += float(np.sum(du * local))
                else:
                    d_r = du * cfg.tau
                ds_dh = surrogate_spike_grad(c["xn"]) / v_th
                if cfg.reset == "hard":
                    d_h = d_r * (1.0 - s) + (d_s - d_r * h) * ds_dh
                else:
                    d_h = d_r + (d_s - d_r * c["thr"]) * ds_dh
                    if quant:
                        g_alpha[i] -= float(np.sum(d_r * s)) * qp.theta
                if quant and not relaxed:
                    g_alpha[i] += float(np.sum(d_h * (c["k"] - c["h_pre"] / qp.alpha)))
                d_u[i] = d_h
                d_syn = d_h
            if i == first:
                if layer.kind == "conv":
                    _, dw = tc.conv2d_backward(d_syn, c["inp"], cache.wq[i], layer.stride, layer.padding)
                else:
                    dw = d_syn.reshape(b, -1).T @ c["inp"].reshape(b, -1)
                d = None
            else:
                d, dw = _syn_backward(layer, cache.wq[i], c["inp"], d_syn)
            g_wq[i] += dw

    weights, alphas = [], []
    for i in weighted:
        w = net.layers[i].weight
        if not quant:
            weights.append(g_wq[i])
            continue
        qp = cache.qparams[i]
        s = tc.qmax(qp.n_w)
        v = w / qp.alpha
        inside = np.abs(v) <= s
        weights.append(np.where(inside, g_wq[i], 0.0))
        rail = np.sign(v) * s
        local = np.where(inside, 0.0 if relaxed else tc.round_half_away(v) - v, rail)
        alphas.append(g_alpha[i] + float(np.sum(g_wq[i] * local)))
    return Gradients(weights, alphas if quant else None)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def backward_bptt(cache: ForwardCache, labels: np.ndarray):
    """Cross-entropy loss on the cached logits and its parameter gradients."""
    loss, dlogits = cross_entropy(cache.logits, np.asarray(labels))
    return loss, backward_from_logits(cache, dlogits)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for key, p in params.items():
            g = grads[key]
            m = self.beta1 * self.m.get(key, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(key, 0.0) + (1 - self.beta2) * g * g
            self.m[key], self.v[key] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            out[key] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


@dataclass
class TrainState:
    net: NetworkSpec
    qparams: list | None
    optimizer: Adam
    epoch: int = 0
    seed: int = 0
    metrics: list = field(default_factory=list)


def make_state(net: NetworkSpec, cfg: TrainConfig) -> TrainState:
    qparams = None
    if cfg.quantized:
        qparams = initial_qparams(net, cfg.n_w, cfg.n_u, cfg.v_th, cfg.reset, cfg.leak_shift)
    return TrainState(net, qparams, Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps), seed=cfg.seed)


def train_step(state: TrainState, x: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    """One optimizer update on a minibatch; returns ``(loss, logits, cache)``."""
    logits, cache = forward_simulated(state.net, x, cfg.lif, state.qparams)
    loss, grads = backward_bptt(cache, y)
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss} at epoch {state.epoch}")
    params = {("w", k): w for k, w in enumerate(state.net.weights())}
    gdict = {("w", k): g for k, g in enumerate(grads.weights)}
    if state.qparams is not None:
        for k, qp in enumerate(state.qparams):
            n = state.net.layers[state.net.weighted_indices[k]].n_params
            params[("a", k)] = qp.alpha
            gdict[("a", k)] = grads.alphas[k] * lsq_grad_scale(n, qp.n_w)
    new = state.optimizer.step(params, gdict)
    state.net = state.net.with_weights([new[("w", k)] for k in range(len(grads.weights))])
    if state.qparams is not None:
        state.qparams = [qp.with_alpha(max(float(new[("a", k)]), EPS_ALPHA), cfg.v_th)
                         for k, qp in enumerate(state.qparams)]
    return loss, logits, cache


def evaluate(net: NetworkSpec, qparams, x: np.ndarray, y: np.ndarray, cfg: LifConfig, batch: int = 256):
    """Accuracy and spike sparsity of the simulated forward over a dataset."""
    correct = 0
    spikes = slots = 0
    for start in range(0, len(x), batch):
        logits, cache = forward_simulated(net, x[start:start + batch], cfg, qparams)
        correct += int((logits.argmax(axis=1) == y[start:start + batch]).sum())
        spikes += cache.record.total_spikes()
        slots += cache.record.slots()
    return correct / len(x), (1.0 - spikes / slots) if slots else 1.0


def train(dataset, cfg: TrainConfig, test_set=None, net: NetworkSpec | None = None, callback=None):
    """Minibatch BPTT over ``cfg.epochs`` epochs; deterministic for a seed.

    ``dataset`` and ``test_set`` expose ``x`` (N, C, H, W) in [0, 1] and
    integer ``y``. Returns ``(state, metrics)``, one metrics dict per epoch.
    """
    if len(dataset.x) == 0:
        raise ValueError("empty dataset")
    rng = tc.make_rng(cfg.seed)
    if net is None:
        classes = int(dataset.y.max()) + 1
        net = desk_network(dataset.x.shape[1:], classes)
    if not net.has_weights():
        net = init_weights(net, rng)
    state = make_state(net, cfg)
    n = len(dataset.x)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        order = rng.permutation(n)
        losses, correct, spikes, slots = [], 0, 0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, logits, cache = train_step(state, dataset.x[idx], dataset.y[idx], cfg)
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == dataset.y[idx]).sum())
            spikes += cache.record.total_spikes()
            slots += cache.record.slots()
        row = {"epoch": epoch + 1, "loss": sum(losses) / n, "acc": correct / n,
               "sparsity": (1.0 - spikes / slots) if slots else 1.0}
        if test_set is not None:
            row["test_acc"], _ = evaluate(state.net, state.qparams, test_set.x, test_set.y, cfg.lif)
        state.metrics.append(row)
        log.info("epoch %d %s", epoch + 1, row)
        if callback is not None:
            callback(row)
    state.epoch = cfg.epochs
    return state, state.metrics


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


__all__ = [
    "TrainConfig", "TrainState", "Gradients", "TrainingDiverged", "forward_simulated", "backward_bptt",
    "backward_from_logits", "surrogate_spike_grad", "soft_step", "train", "train_step", "evaluate",
    "desk_network", "initial_qparams", "cross_entropy", "fold_threshold",
]
