"""Shared-scale uniform quantization.

Throughout this module ``alpha`` is the *step* of the integer grid: a
quantized tensor is ``alpha * q`` with ``q`` an integer in the symmetric range
``[-(2**(n-1) - 1), 2**(n-1) - 1]``. Weights and membrane potentials of a
layer share one ``alpha``; there is no zero-point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .tensor_core import qmax, round_half_away, saturating_cast

EPS_ALPHA = 1e-8


@dataclass(frozen=True)
class QuantParams:
    """Per-layer quantization state.

    ``theta`` is the folded integer firing threshold, ``leak_shift`` the
    right-shift implementing the leak (tau = 2**-leak_shift).
    """

    alpha: float
    n_w: int = 8
    n_u: int = 8
    theta: int = 1
    reset: str = "hard"
    leak_shift: int = 1
    learnable: bool = False

    def __post_init__(self):
        if not self.alpha >= EPS_ALPHA:
            raise ValueError(f"alpha must be >= {EPS_ALPHA}, got {self.alpha}")
        for name in ("n_w", "n_u"):
            bits = getattr(self, name)
            if not 2 <= bits <= 32:
                raise ValueError(f"{name} must be in [2, 32], got {bits}")
        if self.theta < 1:
            raise ValueError("theta must be >= 1")
        if self.reset not in ("hard", "soft"):
            raise ValueError("reset must be 'hard' or 'soft'")
        if self.leak_shift < 0:
            raise ValueError("leak_shift must be >= 0")

    @classmethod
    def for_threshold(cls, alpha: float, n_w: int, n_u: int, v_th: float, **kw) -> "QuantParams":
        alpha = max(float(alpha), EPS_ALPHA)
        return cls(alpha=alpha, n_w=n_w, n_u=n_u, theta=fold_threshold(v_th, alpha), **kw)

    def with_alpha(self, alpha: float, v_th: float) -> "QuantParams":
        alpha = max(float(alpha), EPS_ALPHA)
        return replace(self, alpha=alpha, theta=fold_threshold(v_th, alpha))


def compute_alpha(w: np.ndarray, bits: int) -> float:
    """Scale from the largest ``|tanh(w)|`` spread over ``2**(bits-1) - 1`` steps."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot derive a scale from an empty tensor")
    if not 2 <= bits <= 32:
        raise ValueError(f"bits must be in [2, 32], got {bits}")
    return max(float(np.max(np.abs(np.tanh(w)))) / qmax(bits), EPS_ALPHA)


def lsq_init_alpha(w: np.ndarray, bits: int) -> float:
    """Learned-step-size initialisation ``2 * mean|w| / sqrt(qmax)``."""
    return max(2.0 * float(np.mean(np.abs(w))) / math.sqrt(qmax(bits)), EPS_ALPHA)


def lsq_grad_scale(n_elements: int, bits: int) -> float:
    """Gradient scale ``1 / sqrt(N * qmax)`` applied to the step's gradient."""
    return 1.0 / math.sqrt(n_elements * qmax(bits))


def quantize_weights(w: np.ndarray, alpha: float, bits: int) -> np.ndarray:
    """Integer weights ``sat(round(w / alpha))`` with ties away from zero."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    q = round_half_away(np.asarray(w, dtype=np.float64) / alpha)
    return saturating_cast(np.asarray(q).astype(np.int64), bits)


def dequantize(q: np.ndarray, alpha: float) -> np.ndarray:
    return alpha * np.asarray(q, dtype=np.float64)


def fold_threshold(v_th: float, alpha: float) -> int:
    """Smallest integer ``theta`` with ``theta * alpha > v_th``.

    In exact arithmetic this is ``floor(v_th / alpha) + 1``. The two loops
    make the equivalence ``x * alpha > v_th  <=>  x >= theta`` hold for the
    IEEE products as well, including when ``v_th / alpha`` is an integer.
    """
    if not v_th > 0 or not alpha > 0:
        raise ValueError("v_th and alpha must be positive")
    theta = int(math.floor(v_th / alpha)) + 1
    while theta > 1 and float(theta - 1) * alpha > v_th:
        theta -= 1
    while float(theta) * alpha <= v_th:
        theta += 1
    return theta


def fake_quant(r: np.ndarray, alpha: float, bits: int) -> np.ndarray:
    """Simulated quantization onto ``{k * alpha : |k| <= 2**(bits-1) - 1}``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    s = qmax(bits)
    r = np.asarray(r, dtype=np.float64)
    return alpha * np.clip(round_half_away(r / alpha), -s, s)


def fake_quant_backward(upstream, r, alpha: float, bits: int, grad_scale: float = 1.0):
    """Straight-through gradients of :func:`fake_quant`.

    Rounding passes gradients unchanged; the clamp blocks them outside the
    representable range. The step gradient follows the learned-step-size rule:
    ``round(r/alpha) - r/alpha`` inside the range and ``+-qmax`` on the rails,
    summed and multiplied by ``grad_scale`` (see :func:`lsq_grad_scale`).
    """
    s = qmax(bits)
    r = np.asarray(r, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    v = r / alpha
    inside = np.abs(v) <= s
    grad_r = np.where(inside, upstream, 0.0)
    local = np.where(inside, round_half_away(v) - v, np.sign(v) * s)
    grad_alpha = float(np.sum(upstream * local)) * grad_scale
    return grad_r, grad_alpha


def membrane_index(r: np.ndarray, alpha: float, n_u: int, leak_shift: int, relaxed: bool = False):
    """Grid index of a leaked membrane potential, matching the integer shift.

    ``r`` is the post-reset potential (already a multiple of ``alpha`` in the
    exact path). The index is ``sat(floor(round(r / alpha) / 2**leak_shift))``,
    i.e. an arithmetic right shift of the integer state. With ``relaxed=True``
    rounding and flooring become identities (the straight-through view).

    Returns ``(index, inside)`` where ``inside`` marks entries not clamped.
    """
    s = qmax(n_u)
    v = np.asarray(r, dtype=np.float64) / alpha
    if relaxed:
        leaked = v / (1 << leak_shift)
    else:
        leaked = np.floor(round_half_away(v) / (1 << leak_shift))
    inside = np.abs(leaked) <= s
    return np.clip(leaked, -s, s), inside
