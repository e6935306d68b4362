"""Look-up-table, layer-wise and FLOPs-proxy latency baselines."""
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import HostDevice
from .devicesim import SimDevice, sim_latency
from .errors import DomainError, ParseError, ValidationError
from .io_utils import read_json, write_json
from .kernels import DEFAULT_REPEATS, measure_operator, run_network
from .search_space import (NetworkSkeleton, OpKind,
                           architecture_table, check_arch_id, flops,
                           operator_workloads)

__all__ = [
    "LatencyLUT", "LAYERWISE_REPEATS", "build_lut", "lut_predict",
    "lut_predict_many", "fit_flops_scale", "flops_predict",
    "measure_layerwise_table", "layerwise_predict", "save_lut", "load_lut",
]

logger = logging.getLogger(__name__)

LAYERWISE_REPEATS = 25
_ALL_NONE = 0


@dataclass
class LatencyLUT:
    """Per-workload latency table of one device plus a fixed network overhead.

    None workloads do no work; their entries are always 0.
    """
    device_id: str
    entries: dict = field(default_factory=dict)
    fixed_overhead_ms: float = 0.0

    def __post_init__(self):
        names = [w.name for w in operator_workloads()]
        missing = [n for n in names if n not in self.entries]
        if missing:
            raise ValidationError(f"{self.device_id}: LUT is missing {missing}")
        self.entries = {n: float(self.entries[n]) for n in names}
        if min(self.entries.values()) < 0 or self.fixed_overhead_ms < 0:
            raise ValidationError(f"{self.device_id}: LUT entries must be >= 0")
        none_names = [w.name for w in operator_workloads() if w.kind == OpKind.NONE]
        nonzero = [n for n in none_names if self.entries[n] != 0.0]
        if nonzero:
            logger.warning("%s: zeroing None entries %s", self.device_id, nonzero)
            self.entries.update({n: 0.0 for n in none_names})

    def as_array(self):
        """Entries in operator_workloads() order."""
        return np.array(list(self.entries.values()))


def _table(device, source, repeats, skel, include_overhead):
    skel = skel or NetworkSkeleton()
    entries = {}
    if source == "sim":
        if not isinstance(device, SimDevice):
            raise DomainError(f"{device!r} is not a simulated device")
        for w, cost in zip(operator_workloads(), device.op_cost_ms):
            entries[w.name] = cost
        overhead = sim_latency(device, _ALL_NONE, skel) if include_overhead else 0.0
    elif source == "host":
        if not isinstance(device, HostDevice):
            raise DomainError(f"{device!r} is not a host device")
        spatial = {c: (h, w) for c, h, w in skel.stage_shapes()}
        for w in operator_workloads():
            if w.kind == OpKind.NONE:
                # None work is part of the all-None overhead below
                entries[w.name] = 0.0
                continue
            h, wd = spatial[w.width]
            entries[w.name] = measure_operator(w, repeats=repeats, height=h, width=wd).mean_ms
        overhead = run_network(_ALL_NONE, skel, repeats=repeats).mean_ms if include_overhead else 0.0
    else:
        raise DomainError(f"source must be 'sim' or 'host', got {source!r}")
    return LatencyLUT(device.device_id, entries, float(overhead))


def build_lut(device, source="sim", skel=None, repeats=DEFAULT_REPEATS, include_overhead=True):
    """Measure (host) or read off (sim) every workload once.

    The fixed overhead is the latency of the all-None architecture; pass
    include_overhead=False for a pure operator sum.
    """
    lut = _table(device, source, repeats, skel, include_overhead)
    logger.info("built LUT for %s (overhead %.4f ms)", lut.device_id, lut.fixed_overhead_ms)
    return lut


def lut_predict_many(lut, archs, skel=None):
    """lut_predict over many architecture ids, as an array."""
    skel = skel or NetworkSkeleton()
    archs = np.asarray([check_arch_id(a) for a in archs], dtype=int)
    ops = architecture_table()[0][archs]
    table = lut.as_array()
    n_widths = len(skel.stage_widths)
    cells = np.zeros(len(archs))
    for s in range(n_widths):
        cells += table[ops * n_widths + s].sum(axis=1)
    return lut.fixed_overhead_ms + skel.cells_per_stage * cells


def lut_predict(lut, arch, skel=None):
    """fixed_overhead + K * sum over stages and edges of lut[(op, stage width)]."""
    return float(lut_predict_many(lut, [arch], skel)[0])


# ===== FLOPs proxy =====

def fit_flops_scale(archs, latencies, skel=None):
    """Least-squares scale (ms per FLOP) through the origin."""
    archs = list(archs)
    if not archs or len(archs) != len(latencies):
        raise DomainError("need equally many (>= 1) architectures and latencies")
    x = np.array([flops(a, skel) for a in archs], dtype=float)[:, None]
    scale, *_ = np.linalg.lstsq(x, np.asarray(latencies, dtype=float), rcond=None)
    return float(scale[0])


def flops_predict(scale, arch, skel=None):
    return scale * flops(arch, skel)


# ===== layer-wise sum =====

def measure_layerwise_table(device, source="sim", skel=None, repeats=LAYERWISE_REPEATS):
    """Freshly measured per-operation latencies, in LUT form (mean of `repeats`)."""
    return _table(device, source, repeats, skel, include_overhead=True)


def layerwise_predict(device, arch, skel=None, source="sim", repeats=LAYERWISE_REPEATS, table=None):
    """Sum of freshly measured per-operation latencies of arch.

    Pass `table` (from measure_layerwise_table) to reuse one set of
    measurements across many architectures.
    """
    table = table or measure_layerwise_table(device, source, skel, repeats)
    return lut_predict(table, arch, skel)


# ===== persistence =====

def save_lut(lut, path):
    write_json({"device_id": lut.device_id, "fixed_overhead_ms": lut.fixed_overhead_ms,
                "entries": lut.entries}, path)


def load_lut(path):
    data = read_json(path)
    try:
        return LatencyLUT(data["device_id"], data["entries"], float(data["fixed_overhead_ms"]))
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"malformed LUT file: {err}")
