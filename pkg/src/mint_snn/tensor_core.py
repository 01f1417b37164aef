"""Dense numeric primitives shared by every other module.

Tensors are plain numpy arrays in row-major NCHW layout. Real-valued data is
``float64``; integer data is ``int32`` and every integer accumulation is
checked to fit in signed 32 bits.

Random streams come from :func:`make_rng`, which always uses numpy's PCG64 bit
generator so a seed reproduces the same stream on every platform.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64-backed generator for an unsigned 64-bit seed."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def is_integer_array(x: np.ndarray) -> bool:
    return np.issubdtype(np.asarray(x).dtype, np.integer) or np.asarray(x).dtype == np.bool_


def qmax(bits: int) -> int:
    """Largest magnitude of the symmetric signed range for ``bits`` bits."""
    return (1 << (bits - 1)) - 1


def round_half_away(x):
    """Round to the nearest integer, ties away from zero.

    Works on the exact fractional part so values just below one half
    (e.g. 0.49999999999999994) are never pushed over by the addition that
    ``floor(|x| + 0.5)`` would perform.
    """
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    frac = x - whole
    out = whole + np.where(np.abs(frac) >= 0.5, np.sign(frac), 0.0)
    return out if out.ndim else float(out)


def saturating_cast(x, bits: int):
    """Clamp integers into ``[-(2**(bits-1) - 1), 2**(bits-1) - 1]``.

    Scalars come back as Python ints, arrays as ``int32``.
    """
    if not 2 <= bits <= 32:
        raise ValueError(f"bits must be in [2, 32], got {bits}")
    hi = qmax(bits)
    arr = np.asarray(x)
    if not is_integer_array(arr):
        raise TypeError("saturating_cast expects integer input")
    out = np.clip(arr.astype(np.int64), -hi, hi).astype(np.int32)
    return int(out) if out.ndim == 0 else out


def _check_int32(acc: np.ndarray) -> np.ndarray:
    if acc.size and (acc.min() < INT32_MIN or acc.max() > INT32_MAX):
        raise OverflowError("integer accumulation exceeds the signed 32-bit range")
    return acc.astype(np.int32)


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - k) // stride + 1
    if out < 1:
        raise ShapeError(f"kernel {k} does not fit input {size} with padding {padding}")
    return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, padding: int = 0):
    """Unfold an NCHW batch into ``(B, out_h * out_w, C * kh * kw)`` patches.

    The patch axis is ordered (C, kh, kw) so it lines up with an OIHW kernel
    reshaped to ``(O, C * kh * kw)``.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    b, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kh * kw)
    return cols, oh, ow


def col2im(dcols: np.ndarray, input_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to NCHW."""
    b, c, h, w = input_shape
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    d = dcols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d[:, :, i, j]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


def conv2d(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded cross-correlation of an NCHW input with an OIHW kernel.

    Integer operands accumulate exactly and return ``int32``; anything else is
    computed in ``float64``.
    """
    if kernel.ndim != 4:
        raise ShapeError(f"expected OIHW kernel, got shape {kernel.shape}")
    if x.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input {x.shape} and kernel {kernel.shape} disagree on channels")
    o, _, kh, kw = kernel.shape
    cols, oh, ow = im2col(x, kh, kw, stride, padding)
    w2 = kernel.reshape(o, -1)
    if is_integer_array(x) and is_integer_array(kernel):
        out = _check_int32(cols.astype(np.int64) @ w2.T.astype(np.int64))
    else:
        out = cols.astype(np.float64) @ w2.T.astype(np.float64)
    return out.transpose(0, 2, 1).reshape(x.shape[0], o, oh, ow)


def conv2d_backward(dout: np.ndarray, x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: int = 0):
    """Gradients of :func:`conv2d` with respect to its input and kernel."""
    o, _, kh, kw = kernel.shape
    cols, oh, ow = im2col(x.astype(np.float64), kh, kw, stride, padding)
    d = dout.reshape(dout.shape[0], o, oh * ow).transpose(0, 2, 1)
    dkernel = (d.reshape(-1, o).T @ cols.reshape(-1, cols.shape[2])).reshape(kernel.shape)
    dcols = d @ kernel.reshape(o, -1).astype(np.float64)
    dx = col2im(dcols, x.shape, kh, kw, stride, padding)
    return dx, dkernel


def linear(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Dense layer ``x @ weight.T`` on a batch flattened to ``(B, in)``."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weight.shape[1]:
        raise ShapeError(f"input features {x2.shape[1]} != weight fan-in {weight.shape[1]}")
    if is_integer_array(x2) and is_integer_array(weight):
        return _check_int32(x2.astype(np.int64) @ weight.T.astype(np.int64))
    return x2.astype(np.float64) @ weight.T.astype(np.float64)


def linear_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray):
    x2 = x.reshape(x.shape[0], -1).astype(np.float64)
    dweight = dout.T @ x2
    dx = (dout @ weight.astype(np.float64)).reshape(x.shape)
    return dx, dweight


def _pool_windows(x: np.ndarray, window: int, stride: int):
    if window < 1 or stride < 1:
        raise ShapeError("pool window and stride must be >= 1")
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    h, w = x.shape[2:]
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return win, oh, ow


def pool2d(x: np.ndarray, window: int, stride: int | None = None, kind: str = "max") -> np.ndarray:
    """Max or average pooling without padding.

    Max pooling preserves dtype, so unary spike planes stay unary.
    """
    stride = window if stride is None else stride
    win, _, _ = _pool_windows(x, window, stride)
    if kind == "max":
        return win.max(axis=(-2, -1))
    if kind == "avg":
        return win.mean(axis=(-2, -1))
    raise ValueError(f"unknown pool kind {kind!r}")


def pool2d_backward(dout: np.ndarray, x: np.ndarray, window: int, stride: int | None = None, kind: str = "max"):
    """Route pooled gradients back; max pooling picks the first maximum."""
    stride = window if stride is None else stride
    win, oh, ow = _pool_windows(x, window, stride)
    dx = np.zeros(x.shape, dtype=np.float64)
    if kind == "max":
        first = win.reshape(*win.shape[:4], -1).argmax(axis=-1)
    for i in range(window):
        for j in range(window):
            if kind == "max":
                contrib = np.where(first == i * window + j, dout, 0.0)
            else:
                contrib = dout / (window * window)
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += contrib
    return dx
