"""Binary checkpoints and ``key = value`` run configuration files.

Checkpoint layout, all little-endian::

    b"MINT"  u16 version  u8 flags  u8 timesteps  u8 leak_shift  f64 v_th
    u8 input_ndim  u32 dims...  u16 layer_count
    per layer:
        u8 kind  u8 stride  u8 padding  u8 window  u8 layer_flags
        u8 weight_ndim  u32 dims...  u8 n_w  u8 n_u  f64 alpha  i32 theta
        payload: float64 weights, or int8 weights when the file is quantized
    u32 CRC-32 of every preceding byte

``flags``: bit 0 quantized, bit 1 soft reset, bit 2 quantization parameters
present. ``layer_flags``: bit 0 payload present, bit 1 learnable scale.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .mint_engine import MintLayer, MintNetwork
from .network import LayerSpec, NetworkSpec
from .quantizer import QuantParams

MAGIC = b"MINT"
VERSION = 1
KINDS = ("conv", "linear", "maxpool", "avgpool")

_QUANTIZED, _SOFT, _HAS_QP = 1, 2, 4
_PAYLOAD, _LEARNABLE = 1, 2


class CheckpointError(ValueError):
    """The file is not a well-formed checkpoint."""


class ChecksumError(CheckpointError):
    """Stored CRC-32 does not match the file contents."""


@dataclass(eq=False)
class Checkpoint:
    """A network plus the run settings needed to execute it.

    ``net`` is a :class:`MintNetwork` for quantized checkpoints and a
    :class:`NetworkSpec` otherwise; ``qparams`` then optionally holds trained
    per-layer scales for later conversion.
    """

    net: object
    timesteps: int = 4
    v_th: float = 0.5
    reset: str = "hard"
    leak_shift: int = 1
    qparams: list | None = field(default=None)

    def __post_init__(self):
        if isinstance(self.net, MintNetwork):
            qp = self.net.qparams()[0]
            self.v_th, self.reset, self.leak_shift = float(self.net.v_th), qp.reset, qp.leak_shift
        elif self.qparams is not None:
            for qp in self.qparams:
                if (qp.reset, qp.leak_shift) != (self.reset, self.leak_shift):
                    raise ValueError("quantization parameters disagree with the checkpoint's reset/leak")
        if not 1 <= self.timesteps <= 255:
            raise ValueError("timesteps must be in [1, 255]")

    @property
    def quantized(self) -> bool:
        return isinstance(self.net, MintNetwork)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (type(self.net) is type(other.net) and self.net == other.net
                and (self.timesteps, self.v_th, self.reset, self.leak_shift, self.qparams)
                == (other.timesteps, other.v_th, other.reset, other.leak_shift, other.qparams))


def _pack_layer(kind, stride, padding, window, weight, qp, quantized) -> bytes:
    lflags = (_PAYLOAD if weight is not None else 0) | (_LEARNABLE if qp is not None and qp.learnable else 0)
    shape = () if weight is None else weight.shape
    out = struct.pack("<6B", KINDS.index(kind), stride, padding, window, lflags, len(shape))
    out += struct.pack(f"<{len(shape)}I", *shape)
    if qp is None:
        out += struct.pack("<BBdi", 0, 0, 0.0, 0)
    else:
        out += struct.pack("<BBdi", qp.n_w, qp.n_u, qp.alpha, qp.theta)
    if weight is not None:
        if quantized:
            if weight.size and np.abs(weight.astype(np.int64)).max() > tc.qmax(qp.n_w):
                raise ValueError(f"quantized weights exceed the {qp.n_w}-bit range")
            out += weight.astype("<i1").tobytes()
        else:
            out += np.asarray(weight, dtype="<f8").tobytes()
    return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    net = ckpt.net
    quantized = ckpt.quantized
    if quantized:
        qps = [layer.qp for layer in net.layers]
        v_th = net.v_th
    else:
        qps = [None] * len(net.layers)
        if ckpt.qparams is not None:
            if len(ckpt.qparams) != len(net.weighted_indices):
                raise ValueError("need one QuantParams per weighted layer")
            for i, qp in zip(net.weighted_indices, ckpt.qparams):
                qps[i] = qp
        v_th = ckpt.v_th
    flags = (_QUANTIZED if quantized else 0) | (_SOFT if ckpt.reset == "soft" else 0)
    flags |= _HAS_QP if quantized or ckpt.qparams is not None else 0
    shape = tuple(net.input_shape)
    out = bytearray(MAGIC)
    out += struct.pack("<HBBBdB", VERSION, flags, ckpt.timesteps, ckpt.leak_shift, v_th, len(shape))
    out += struct.pack(f"<{len(shape)}I", *shape)
    out += struct.pack("<H", len(net.layers))
    for layer, qp in zip(net.layers, qps):
        weight = layer.w_hat if quantized else layer.weight
        out += _pack_layer(layer.kind, layer.stride, layer.padding, layer.window, weight, qp, quantized)
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        values = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return values

    def array(self, dtype: str, shape: tuple) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        end = self.pos + count * dt.itemsize
        if end > len(self.data):
            raise CheckpointError("checkpoint payload is truncated")
        arr = np.frombuffer(self.data, dtype=dt, count=count, offset=self.pos).reshape(shape)
        self.pos = end
        return arr.astype(dt.newbyteorder("="))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CheckpointError("not a MINT checkpoint (bad magic)")
    body, (stored,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored:
        raise ChecksumError("checkpoint checksum mismatch")
    r = _Reader(body)
    r.pos = 4
    version, flags, timesteps, leak_shift, v_th, ndim = r.take("<HBBBdB")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    input_shape = r.take(f"<{ndim}I")
    (count,) = r.take("<H")
    quantized = bool(flags & _QUANTIZED)
    reset = "soft" if flags & _SOFT else "hard"
    layers, qparams = [], []
    for _ in range(count):
        kind_code, stride, padding, window, lflags, wdim = r.take("<6B")
        if kind_code >= len(KINDS):
            raise CheckpointError(f"unknown layer kind code {kind_code}")
        kind = KINDS[kind_code]
        shape = r.take(f"<{wdim}I")
        n_w, n_u, alpha, theta = r.take("<BBdi")
        qp = None
        if n_w:
            qp = QuantParams(alpha, n_w, n_u, theta, reset, leak_shift, bool(lflags & _LEARNABLE))
        weight = None
        if lflags & _PAYLOAD:
            weight = r.array("<i1" if quantized else "<f8", shape)
        if quantized:
            layers.append(MintLayer(kind, weight, qp, stride, padding, window))
        else:
            layers.append(LayerSpec(kind, shape, stride, padding, window, weight))
            if kind in ("conv", "linear"):
                qparams.append(qp)
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last layer")
    if quantized:
        net = MintNetwork(tuple(input_shape), layers, v_th)
        return Checkpoint(net, timesteps, v_th, reset, leak_shift)
    net = NetworkSpec(tuple(input_shape), layers)
    return Checkpoint(net, timesteps, v_th, reset, leak_shift, qparams if flags & _HAS_QP else None)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = encode_checkpoint(ckpt)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# -- run configuration ----------------------------------------------------------

def parse_config(text: str) -> dict:
    """``key = value`` lines to a dict of strings; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
