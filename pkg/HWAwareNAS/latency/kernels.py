"""Reference implementations of the five cell operators and a network executor.

Convolutions are direct: one channel contraction per kernel offset, no
im2col and no BLAS-specific layout tricks. Latencies measured here are only
meant to be consistent with each other, not with any DNN framework.
Measurement calls must not run concurrently in one process.
"""
import functools
import logging
import os
import time
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import DomainError, ShapeError
from .search_space import (NetworkSkeleton, OpKind, OperatorWorkload,
                           cell_graph)

__all__ = [
    "LatencyMeasurement", "WARMUP_RUNS", "DEFAULT_REPEATS", "WORKLOAD_MAP_SIZE",
    "conv_weights", "conv2d", "avg_pool3x3", "apply_op", "run_operator",
    "run_cell", "build_network", "run_network", "run_workload_loop",
    "measure_operator", "PIN_CORE_ENV", "PIN_CORE_ALIASES", "pin_process_from_env",
]

logger = logging.getLogger(__name__)

WARMUP_RUNS = 3
DEFAULT_REPEATS = 50
WORKLOAD_MAP_SIZE = 32
PIN_CORE_ENV = "MAPLE_PIN_CORE"
PIN_CORE_ALIASES = ("HWLATENCY_PIN_CORE",)

# Salts keep the seeded weight streams of different layers apart.
_CELL_SALT = 11
_STEM_SALT = 23
_REDUCE_SALT = 37
_HEAD_SALT = 41
_INPUT_SALT = 53


@dataclass
class LatencyMeasurement:
    """Timed runs of one workload; all durations in milliseconds."""
    mean_ms: float
    runs: int
    raw_ms: list = field(default_factory=list)

    @classmethod
    def from_raw(cls, raw_ms):
        raw_ms = [float(t) for t in raw_ms]
        return cls(mean_ms=float(np.mean(raw_ms)), runs=len(raw_ms), raw_ms=raw_ms)

    @property
    def cv(self):
        """Coefficient of variation of the raw durations."""
        return float(np.std(self.raw_ms) / self.mean_ms) if self.mean_ms > 0 else 0.0


# ===== operators =====

@functools.lru_cache(maxsize=None)
def conv_weights(kind, width):
    """Fixed pseudo-random weights of a cell convolution, seeded by (kind, width)."""
    kind = OpKind(kind)
    if kind == OpKind.CONV1X1:
        k = 1
    elif kind == OpKind.CONV3X3:
        k = 3
    else:
        raise DomainError(f"{kind.label} has no weights")
    return _frozen_weights([_CELL_SALT, int(kind), width], (width, width, k, k))


def _frozen_weights(seed, shape):
    fan_in = int(np.prod(shape[1:]))
    weights = np.random.default_rng(seed).uniform(-1.0, 1.0, size=shape) / np.sqrt(fan_in)
    weights.setflags(write=False)
    return weights


def conv2d(x, weights):
    """Same-size, stride-1 convolution with zero padding of k // 2.

    Args:
        x (numpy.ndarray): input tensor of shape (C_in, H, W)
        weights (numpy.ndarray): kernel of shape (C_out, C_in, k, k), k odd

    Returns:
        numpy.ndarray of shape (C_out, H, W).
    """
    c_out, c_in, k, _ = weights.shape
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got tensor of shape {x.shape}")
    _, h, w = x.shape
    if k > 1 and (h < k or w < k):
        raise ShapeError(f"{k}x{k} kernel needs at least a {k}x{k} map, got {h}x{w}")
    pad = k // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((c_out, h, w))
    for di in range(k):
        for dj in range(k):
            out += np.tensordot(weights[:, :, di, dj], padded[:, di:di + h, dj:dj + w], axes=1)
    return out


def avg_pool3x3(x):
    """Stride-1, padding-1 average over the in-bounds elements of each window."""
    _, h, w = x.shape
    if h < 3 or w < 3:
        raise ShapeError(f"3x3 pooling needs at least a 3x3 map, got {h}x{w}")
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    valid = np.pad(np.ones((h, w)), 1)
    total = np.zeros(x.shape)
    count = np.zeros((h, w))
    for di in range(3):
        for dj in range(3):
            total += padded[:, di:di + h, dj:dj + w]
            count += valid[di:di + h, dj:dj + w]
    return total / count


def apply_op(kind, x):
    """Apply one cell operation to x; the width comes from x's channel count."""
    kind = OpKind(kind)
    if kind == OpKind.NONE:
        return np.zeros_like(x)
    if kind == OpKind.SKIP:
        return x.copy()
    if kind == OpKind.AVGPOOL3X3:
        return avg_pool3x3(x)
    return conv2d(x, conv_weights(kind, x.shape[0]))


def run_operator(w, x):
    """Run one operator workload on x.

    Args:
        w (OperatorWorkload): the workload; its width must match x's channels
        x (numpy.ndarray): tensor of shape (C, H, W)

    Returns:
        (output tensor, wall-clock duration of the call in milliseconds)
    """
    if x.ndim != 3 or x.shape[0] != w.width:
        raise ShapeError(f"{w.name} expects {w.width} channels, got tensor of shape {x.shape}")
    start = time.perf_counter()
    out = apply_op(w.kind, x)
    return out, (time.perf_counter() - start) * 1e3


# ===== cells and networks =====

def run_cell(arch, x):
    """Forward one cell; node j sums the outputs of all edges into j."""
    cell = cell_graph(arch)
    nodes = {0: x}
    for node in nx.topological_sort(cell):
        if node == 0:
            continue
        out = np.zeros_like(x)
        for src, _, op in cell.in_edges(node, data="op"):
            out += apply_op(op, nodes[src])
        nodes[node] = out
    return nodes[3]


def _reduce(x, weights):
    c, h, w = x.shape
    pooled = x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return conv2d(pooled, weights)


def build_network(arch, skel=None):
    """Instantiate the network of arch and return its forward function."""
    skel = skel or NetworkSkeleton()
    widths = skel.stage_widths
    stem = _frozen_weights([_STEM_SALT, skel.in_channels, widths[0]],
                           (widths[0], skel.in_channels, 3, 3))
    reductions = [_frozen_weights([_REDUCE_SALT, c, c_next], (c_next, c, 1, 1))
                  for c, c_next in zip(widths, widths[1:])]
    head = _frozen_weights([_HEAD_SALT, widths[-1], skel.num_classes],
                           (skel.num_classes, widths[-1]))

    def forward(x):
        x = conv2d(x, stem)
        for s in range(len(widths)):
            if s:
                x = _reduce(x, reductions[s - 1])
            for _ in range(skel.cells_per_stage):
                x = run_cell(arch, x)
        return head @ x.mean(axis=(1, 2))

    return forward


def _network_input(skel):
    rng = np.random.default_rng([_INPUT_SALT, skel.in_channels, skel.height, skel.width])
    return rng.standard_normal((skel.in_channels, skel.height, skel.width))


def run_network(arch, skel=None, repeats=DEFAULT_REPEATS, warmup=WARMUP_RUNS):
    """Measure end-to-end latency of arch on this host.

    Args:
        arch (int): architecture id
        skel (NetworkSkeleton): macro skeleton
        repeats (int): number of timed forward passes
        warmup (int): untimed forward passes run first

    Returns:
        LatencyMeasurement over the timed runs.
    """
    if repeats < 1:
        raise DomainError(f"repeats must be >= 1, got {repeats}")
    skel = skel or NetworkSkeleton()
    forward = build_network(arch, skel)
    x = _network_input(skel)
    for _ in range(warmup):
        forward(x)
    raw = []
    for _ in range(repeats):
        start = time.perf_counter()
        forward(x)
        raw.append((time.perf_counter() - start) * 1e3)
    measurement = LatencyMeasurement.from_raw(raw)
    if measurement.cv > 0.5:
        logger.warning("arch %d: noisy measurement (cv=%.2f); is the host idle?",
                       arch, measurement.cv)
    return measurement


# ===== workload loops =====

def _workload_input(width, height=WORKLOAD_MAP_SIZE, width_px=WORKLOAD_MAP_SIZE):
    return np.random.default_rng([_INPUT_SALT, width, height, width_px]).standard_normal(
        (width, height, width_px))


def run_workload_loop(w, iterations=100):
    """Apply workload w `iterations` times to a fixed 32x32 tensor.

    Returns:
        total wall-clock duration in milliseconds.
    """
    if iterations < 1:
        raise DomainError(f"iterations must be >= 1, got {iterations}")
    x = _workload_input(w.width)
    start = time.perf_counter()
    for _ in range(iterations):
        apply_op(w.kind, x)
    return (time.perf_counter() - start) * 1e3


def measure_operator(w, repeats=DEFAULT_REPEATS, height=WORKLOAD_MAP_SIZE,
                     width=WORKLOAD_MAP_SIZE, warmup=WARMUP_RUNS):
    """Mean-of-`repeats` latency of a single operator call."""
    if repeats < 1:
        raise DomainError(f"repeats must be >= 1, got {repeats}")
    x = _workload_input(w.width, height, width)
    for _ in range(warmup):
        run_operator(w, x)
    return LatencyMeasurement.from_raw(run_operator(w, x)[1] for _ in range(repeats))


def pin_process_from_env():
    """Pin this process to the core named by MAPLE_PIN_CORE, if set.

    HWLATENCY_PIN_CORE is read when MAPLE_PIN_CORE is unset.

    Returns:
        the pinned core id, or None when no variable is set.
    """
    core = next((os.environ[name] for name in (PIN_CORE_ENV,) + PIN_CORE_ALIASES
                 if name in os.environ), None)
    if core is None:
        return None
    try:
        os.sched_setaffinity(0, {int(core)})
    except (ValueError, OSError, AttributeError) as err:
        logger.warning("could not pin to core %s: %s", core, err)
        return None
    logger.info("pinned measurement process to core %s", core)
    return int(core)
