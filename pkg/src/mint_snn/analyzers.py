"""Memory footprint, spike sparsity, PE-array cost and inference energy models.

Costs are relative to an 8-bit integer adder (energy 1, area 1). Five anchor
rows are fixed; every other unit is derived from them:

* adders scale linearly with bit-width from their 8-bit row,
* float multipliers interpolate linearly between the 8- and 32-bit rows,
* integer multipliers scale linearly from the 8-bit row,
* a comparator costs ``compare_factor`` and a shifter ``shift_factor`` times
  the adder of the same domain and width.

Static power is taken proportional to area (leakage tracks transistor count).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from fractions import Fraction

import numpy as np

from . import tensor_core as tc
from .network import NetworkSpec, SpikeState

ANCHOR_ROWS = {
    ("add", "int", 8): (1.0, 1.0),
    ("add", "float", 8): (9.6, 12.7),
    ("mul", "int", 8): (10.2, 4.0),
    ("mul", "float", 8): (12.2, 5.0),
    ("mul", "float", 32): (48.8, 19.3),
}


@dataclass
class CostTable:
    """Relative (energy, area) per arithmetic unit ``(op, domain, bits)``."""

    rows: dict = field(default_factory=lambda: dict(ANCHOR_ROWS))
    compare_factor: float = 0.5
    shift_factor: float = 0.25
    memory_energy_per_byte: float = 2.0

    def lookup(self, op: str, domain: str, bits: int) -> tuple[float, float]:
        key = (op, domain, int(bits))
        if key in self.rows:
            return self.rows[key]
        if op in ("cmp", "shift"):
            factor = self.compare_factor if op == "cmp" else self.shift_factor
            e, a = self.lookup("add", domain, bits)
            return factor * e, factor * a
        anchors = sorted(b for (o, d, b) in self.rows if o == op and d == domain)
        if not anchors:
            raise KeyError(f"no cost rows for {domain} {op}")
        if len(anchors) == 1:
            e, a = self.rows[(op, domain, anchors[0])]
            return e * bits / anchors[0], a * bits / anchors[0]
        lo, hi = (anchors[0], anchors[1]) if bits <= anchors[1] else (anchors[-2], anchors[-1])
        (e0, a0), (e1, a1) = self.rows[(op, domain, lo)], self.rows[(op, domain, hi)]
        frac = (bits - lo) / (hi - lo)
        return e0 + frac * (e1 - e0), a0 + frac * (a1 - a0)

    def energy(self, op: str, domain: str, bits: int) -> float:
        return self.lookup(op, domain, bits)[0]

    def area(self, op: str, domain: str, bits: int) -> float:
        return self.lookup(op, domain, bits)[1]

    def to_text(self) -> str:
        lines = ["# unit = energy, area (relative to an 8-bit int adder)"]
        for (op, domain, bits), (e, a) in sorted(self.rows.items()):
            lines.append(f"{domain}.{op}.{bits} = {e:g}, {a:g}")
        lines += [f"compare_factor = {self.compare_factor:g}", f"shift_factor = {self.shift_factor:g}",
                  f"memory_energy_per_byte = {self.memory_energy_per_byte:g}"]
        return "\n".join(lines) + "\n"


def parse_cost_table(text: str, base: CostTable | None = None) -> CostTable:
    """Read ``key = value`` lines; ``#`` starts a comment.

    Unit rows look like ``int.add.8 = 1, 1``; scalar keys are
    ``compare_factor``, ``shift_factor`` and ``memory_energy_per_byte``.
    """
    table = CostTable() if base is None else CostTable(dict(base.rows), base.compare_factor,
                                                       base.shift_factor, base.memory_energy_per_byte)
    scalars = {"compare_factor", "shift_factor", "memory_energy_per_byte"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        if key in scalars:
            setattr(table, key, float(value))
            continue
        parts = key.split(".")
        nums = [v.strip() for v in value.split(",")]
        if len(parts) != 3 or parts[0] not in ("int", "float") or len(nums) != 2:
            raise ValueError(f"line {lineno}: bad cost row {raw.strip()!r}")
        table.rows[(parts[1], parts[0], int(parts[2]))] = (float(nums[0]), float(nums[1]))
    return table


def load_cost_table(path) -> CostTable:
    with open(path, encoding="utf-8") as fh:
        return parse_cost_table(fh.read())


# -- memory footprint ---------------------------------------------------------

@dataclass
class FootprintReport:
    n_w: int
    n_u: int
    batch: int
    timesteps: int
    weight_bytes: int
    membrane_bytes: int
    total_bytes: int
    membrane_share: float

    def reduction_vs(self, baseline: "FootprintReport") -> float:
        return 1.0 - self.total_bytes / baseline.total_bytes


def footprint(net: NetworkSpec, n_w: int, n_u: int, batch: int = 1, timesteps: int = 1) -> FootprintReport:
    """Bytes of weight and membrane storage.

    One ``n_w``-bit word per weight, and ``timesteps`` ``n_u``-bit membrane
    slots per neuron per sample. ``timesteps=1`` is the engine's carried state;
    frameworks that keep every timestep's potential for BPTT pass ``T``.
    A bit-width of 32 stands for full precision.
    """
    if batch < 1 or timesteps < 1:
        raise ValueError("batch and timesteps must be >= 1")
    weight_bits = sum(net.param_counts()) * n_w
    membrane_bits = batch * timesteps * sum(net.neuron_counts()) * n_u
    wb, mb = math.ceil(weight_bits / 8), math.ceil(membrane_bits / 8)
    total = wb + mb
    return FootprintReport(n_w, n_u, batch, timesteps, wb, mb, total, mb / total if total else 0.0)


# -- spike sparsity -------------------------------------------------------------

def sparsity(spikes: SpikeState) -> float:
    """``1 - spikes / (neurons * timesteps * samples)`` over all spiking layers."""
    slots = spikes.slots()
    if slots == 0:
        raise ValueError("empty spike record")
    return 1.0 - spikes.total_spikes() / slots


def expected_spikes_per_neuron(sparsity_value: float, timesteps: int) -> float:
    """``(1 - s) * T``, evaluated on the shortest decimal of ``s`` so 0.92 and 4 give 0.32."""
    return float((1 - Fraction(repr(float(sparsity_value)))) * timesteps)


def spikes_per_neuron(spikes: SpikeState) -> float:
    """Mean spike count per neuron per sample over the whole run."""
    denom = spikes.neurons() * spikes.batch
    if denom == 0:
        raise ValueError("empty spike record")
    return spikes.total_spikes() / denom


# -- PE-array hardware cost ------------------------------------------------------

DATAPATHS = ("mint", "naive_uq", "fixed_point")


@dataclass
class UnitCost:
    name: str
    count: int
    area: float
    energy: float


@dataclass
class HwCostReport:
    datapath: str
    n_w: int
    n_u: int
    array_size: int
    relative_area: float
    relative_dynamic_power: float
    relative_static_power: float
    breakdown: list


def pe_units(datapath: str, n_w: int, n_u: int) -> list[tuple[str, str, int]]:
    """Arithmetic units of one output-stationary LIF processing element."""
    n = max(n_w, n_u)
    if datapath == "mint":
        return [("add", "int", n), ("cmp", "int", n), ("shift", "int", n)]
    if datapath == "fixed_point":
        return [("add", "int", n), ("cmp", "int", n_u), ("shift", "int", n_u)]
    if datapath == "naive_uq":
        # integer accumulation, one fp32 rescale multiply, fp32 LIF units
        return [("add", "int", n_w), ("mul", "float", 32), ("add", "float", 32),
                ("cmp", "float", 32), ("shift", "float", 32)]
    raise ValueError(f"unknown datapath {datapath!r}; choose from {DATAPATHS}")


def pe_cost(datapath: str, n_w: int, n_u: int, array_size: int = 128,
            table: CostTable | None = None) -> HwCostReport:
    if array_size < 1:
        raise ValueError("array_size must be >= 1")
    table = table or CostTable()
    breakdown = []
    for op, domain, bits in pe_units(datapath, n_w, n_u):
        e, a = table.lookup(op, domain, bits)
        breakdown.append(UnitCost(f"{domain}-{op}{bits}", array_size, a, e))
    area = sum(u.count * u.area for u in breakdown)
    dyn = sum(u.count * u.energy for u in breakdown)
    return HwCostReport(datapath, n_w, n_u, array_size, area, dyn, area, breakdown)


# -- inference energy --------------------------------------------------------------

@dataclass
class EnergyReport:
    accumulation: float
    lif: float
    encoding: float
    memory: float

    @property
    def computation(self) -> float:
        """Spike-driven accumulation plus LIF updates (first-layer MACs excluded)."""
        return self.accumulation + self.lif

    @property
    def total(self) -> float:
        return self.accumulation + self.lif + self.encoding + self.memory


def _layer_geometry(net):
    """(kind, weight_shape, stride, padding, window, bits) for each layer."""
    out = []
    for layer in net.layers:
        if hasattr(layer, "w_hat"):
            shape = () if layer.w_hat is None else tuple(layer.w_hat.shape)
            bits = None if layer.qp is None else (layer.qp.n_w, layer.qp.n_u)
        else:
            shape, bits = tuple(layer.weight_shape), None
        out.append((layer.kind, shape, layer.stride, layer.padding, layer.window, bits))
    return out


def _active_taps(kind, shape, stride, padding, s_in) -> int:
    """Synaptic accumulations triggered by a (T, B, ...) spike input."""
    flat = s_in.reshape((-1,) + s_in.shape[2:]).astype(np.float64)
    if kind == "linear":
        return int(flat.sum()) * shape[0]
    o, _, kh, kw = shape
    cols, _, _ = tc.im2col(flat, kh, kw, stride, padding)
    return int(round(cols.sum())) * o


def inference_energy(net, spike_record: SpikeState, cost_table: CostTable | None = None,
                     n_w: int | None = None, n_u: int | None = None) -> EnergyReport:
    """Sparsity-aware energy of one run that produced ``spike_record``.

    Hidden and readout layers pay one adder access per input spike per fan-out
    synapse; every LIF neuron pays an add, a compare and a shift per timestep;
    the first layer pays a dense MAC per synapse. Memory traffic is weights
    read once per sample, each membrane slot read and written per timestep, and
    each spike written and read once (one bit), times a per-byte coefficient.
    ``n_w``/``n_u`` override the network's own bit-widths.
    """
    table = cost_table or CostTable()
    geo = _layer_geometry(net)
    weighted = [i for i, g in enumerate(geo) if g[0] in ("conv", "linear")]
    if n_w is None or n_u is None:
        bits = geo[weighted[0]][5]
        if bits is None:
            raise ValueError("pass n_w and n_u for a network without quantization parameters")
        n_w = bits[0] if n_w is None else n_w
        n_u = bits[1] if n_u is None else n_u
    width = max(n_w, n_u)
    e_add = table.energy("add", "int", width)
    e_lif = e_add + table.energy("cmp", "int", width) + table.energy("shift", "int", width)
    e_mac = table.energy("mul", "int", n_w) + e_add

    T, B = spike_record.timesteps, spike_record.batch
    planes = dict(zip(spike_record.layer_indices, spike_record.spikes))
    if set(planes) != set(weighted[:-1]):
        raise ValueError("spike record does not match the network's spiking layers")

    accum = lif = encoding = 0.0
    mem_bytes = 0.0
    current = None
    for i, (kind, shape, stride, padding, window, _) in enumerate(geo):
        if kind in ("maxpool", "avgpool"):
            flat = current.reshape((-1,) + current.shape[2:])
            pooled = tc.pool2d(flat, window, stride, "max")
            current = pooled.reshape(current.shape[:2] + pooled.shape[1:])
            continue
        fan_in = int(np.prod(shape[1:]))
        n_params = int(np.prod(shape))
        mem_bytes += B * n_params * n_w / 8
        if i == weighted[0]:
            out_size = (planes[i].shape[2:] if i in planes else None)
            outputs = int(np.prod(out_size)) if out_size is not None else shape[0]
            encoding += T * B * outputs * fan_in * e_mac
        else:
            accum += _active_taps(kind, shape, stride, padding, current) * e_add
        if i in planes:
            neurons = int(np.prod(planes[i].shape[2:]))
            lif += T * B * neurons * e_lif
            mem_bytes += T * B * neurons * (2 * n_u / 8 + 2 / 8)
            current = planes[i]
    memory = mem_bytes * table.memory_energy_per_byte
    return EnergyReport(accum, lif, encoding, memory)


# -- CSV reports ------------------------------------------------------------------

def csv_text(rows: list[dict]) -> str:
    """CSV with one header line and LF endings; column order follows the dicts."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def report_row(config: dict, report) -> dict:
    """Config fields first, then the report's scalar metrics."""
    row = dict(config)
    for f in fields(report):
        value = getattr(report, f.name)
        if isinstance(value, (int, float, str)) and f.name not in row:
            row[f.name] = value
    return row
