"""Finite-difference checking of the hand-written BPTT gradients.

The relaxed forward (soft step instead of a hard threshold, identity instead
of rounding) is the function whose exact gradient ``backward_bptt`` returns.
It still has kinks where a clamp engages or the triangle surrogate bends, so
a sample is rejected when any such boundary lies within ``MARGIN``.
"""

import numpy as np

from mint_snn import network as nw
from mint_snn.lif_reference import LifConfig
from mint_snn.quantizer import QuantParams
from mint_snn.tensor_core import make_rng, qmax
from mint_snn.trainer import backward_bptt, cross_entropy, forward_simulated

MARGIN = 1e-3
STEP = 1e-6


def tiny_net(rng):
    net = nw.NetworkSpec((1, 2, 2), [nw.conv(2, 1, 2, 1, 0), nw.linear(2, 2), nw.linear(2, 2)])
    return nw.init_weights(net, rng, gain=float(rng.uniform(1.0, 3.0)))


def param_count(net):
    return sum(net.param_counts())


def _loss(net, qps, x, y, cfg):
    logits, _ = forward_simulated(net, x, cfg, qps, relaxed=True)
    return cross_entropy(logits, y)[0]


def _near_kink(net, qps, cache):
    for step in cache.steps:
        for i, c in step.items():
            if "xn" not in c:
                continue
            if np.min(np.abs(np.abs(c["xn"]) - 1.0)) < MARGIN or np.min(np.abs(c["xn"])) < MARGIN:
                return True
            if qps is not None:
                qp = cache.qparams[i]
                leaked = c["r"] / qp.alpha / (1 << qp.leak_shift)
                if np.min(np.abs(np.abs(leaked) - qmax(qp.n_u))) < MARGIN:
                    return True
    if qps is not None:
        for i, qp in zip(net.weighted_indices, qps):
            v = net.layers[i].weight / qp.alpha
            if np.min(np.abs(np.abs(v) - qmax(qp.n_w))) < MARGIN:
                return True
    return False


def draw_case(seed):
    """A random (net, qparams, x, y, cfg); ``qparams`` is None in the float case."""
    rng = make_rng(seed)
    net = tiny_net(rng)
    cfg = LifConfig(v_th=0.5, tau=0.5, reset=str(rng.choice(["hard", "soft"])),
                    timesteps=int(rng.integers(1, 5)))
    qps = None
    if rng.random() < 0.5:
        bits = int(rng.choice([2, 4, 8]))
        qps = [QuantParams.for_threshold(float(np.abs(net.layers[i].weight).max()) * rng.uniform(0.3, 1.2)
                                         / qmax(bits), bits, bits, cfg.v_th, reset=cfg.reset)
               for i in net.weighted_indices]
    x = rng.uniform(0.0, 1.0, size=(4,) + net.input_shape)
    y = rng.integers(0, 2, size=4)
    return net, qps, x, y, cfg


def relative_errors(net, qps, x, y, cfg):
    """Analytic vs central-difference gradients for every weight and scale."""
    _, cache = forward_simulated(net, x, cfg, qps, relaxed=True)
    _, grads = backward_bptt(cache, y)
    errors = []
    weights = net.weights()
    for k, w in enumerate(weights):
        for idx in np.ndindex(w.shape):
            def shifted(delta):
                ws = [a.copy() for a in weights]
                ws[k][idx] += delta
                return _loss(net.with_weights(ws), qps, x, y, cfg)
            fd = (shifted(STEP) - shifted(-STEP)) / (2 * STEP)
            errors.append(abs(grads.weights[k][idx] - fd) / (abs(fd) + 1e-6))
    if qps is not None:
        for k, qp in enumerate(qps):
            def shifted(delta):
                q2 = list(qps)
                q2[k] = QuantParams(qp.alpha + delta, qp.n_w, qp.n_u, qp.theta, qp.reset, qp.leak_shift)
                return _loss(net, q2, x, y, cfg)
            fd = (shifted(STEP * qp.alpha) - shifted(-STEP * qp.alpha)) / (2 * STEP * qp.alpha)
            errors.append(abs(grads.alphas[k] - fd) / (abs(fd) + 1e-6))
    return errors


def check_trials(trials, start=0, max_attempts=1000):
    """Max relative error over ``trials`` accepted samples, and the number rejected."""
    worst, accepted, rejected, seed = 0.0, 0, 0, start
    while accepted < trials:
        if seed - start >= max_attempts:
            raise RuntimeError(f"only {accepted} of {trials} samples were away from kinks")
        net, qps, x, y, cfg = draw_case(seed)
        seed += 1
        _, cache = forward_simulated(net, x, cfg, qps, relaxed=True)
        if _near_kink(net, qps, cache):
            rejected += 1
            continue
        worst = max(worst, max(relative_errors(net, qps, x, y, cfg)))
        accepted += 1
    return worst, rejected
