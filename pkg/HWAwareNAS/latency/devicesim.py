"""Synthetic device pool with deterministic latency, counter and accuracy oracles.

A simulated device prices every operator workload, adds a fixed overhead,
and inflates the cell cost for every pair of back-to-back convolutions. The
inflation is what a per-operator look-up table cannot see.
"""
import functools
import hashlib
import logging
from dataclasses import asdict, dataclass

import networkx as nx
import numpy as np

from .errors import ParseError, ValidationError
from .io_utils import read_json, write_json
from .hwcounters import CANONICAL_EVENTS, NUM_EVENTS, HardwareDescriptor
from .search_space import (NUM_ARCHITECTURES, NetworkSkeleton, OpKind,
                           architecture_table, arch_to_ops, cell_flops,
                           cell_graph, check_arch_id, operator_workloads)

__all__ = [
    "SimConfig", "SimDevice", "AccuracyOracle", "DEFAULT_POOL_SEEDS", "make_device", "default_pool",
    "sim_latency", "sim_latencies", "sim_descriptor", "sim_accuracy",
    "accuracy_table", "save_device_pool", "load_device_pool",
]

logger = logging.getLogger(__name__)

_COST_SALT = 101
_PROFILE_SALT = 202
_NOISE_SALT = 303

DEFAULT_POOL_SEEDS = tuple(range(1, 9))

# Cost of one width-16 call, in ms, before per-device scaling.
_KIND_BASE_MS = {
    "cpu": {OpKind.NONE: 0.0, OpKind.SKIP: 0.02, OpKind.CONV1X1: 0.15,
            OpKind.CONV3X3: 0.9, OpKind.AVGPOOL3X3: 0.12},
    "gpu": {OpKind.NONE: 0.0, OpKind.SKIP: 0.01, OpKind.CONV1X1: 0.05,
            OpKind.CONV3X3: 0.2, OpKind.AVGPOOL3X3: 0.04},
}
_OVERHEAD_MS = {"cpu": (0.2, 0.8), "gpu": (1.0, 3.0)}
_WIDTH_GROWTH = {"cpu": (0.6, 1.0), "gpu": (0.05, 0.3)}

# log10 magnitude of each event per ms of operator cost, canonical event order.
_EVENT_MAGNITUDE = (6.5, 6.8, 4.5, 3.5, 6.0, 4.5, 3.0, 3.8, 2.8, 3.5)


@dataclass(frozen=True)
class SimConfig:
    """Knobs of synthetic device generation."""
    kind: str = "cpu"
    noise_cv: float = 0.02
    interaction_range: tuple = (0.05, 0.25)
    cost_sigma: float = 0.25
    proxy_cpu_seed: int = None

    def __post_init__(self):
        object.__setattr__(self, "interaction_range", tuple(self.interaction_range))
        if self.kind not in _KIND_BASE_MS:
            raise ValidationError(f"device kind must be one of {sorted(_KIND_BASE_MS)}, got {self.kind!r}")
        if self.noise_cv < 0 or self.cost_sigma < 0:
            raise ValidationError("noise_cv and cost_sigma must be >= 0")
        low, high = self.interaction_range
        if not 0 <= low <= high:
            raise ValidationError(f"bad interaction range {self.interaction_range}")


@dataclass(frozen=True)
class SimDevice:
    """A synthetic device; every field is a pure function of seed and config.

    op_cost_ms is indexed like operator_workloads(); counter_profile holds one
    (scale, exponent) pair per canonical counter event.
    """
    device_id: str
    seed: int
    kind: str
    proxy_cpu_seed: int
    base_overhead_ms: float
    op_cost_ms: tuple
    interaction_coeff: float
    noise_cv: float
    counter_profile: tuple

    def __post_init__(self):
        object.__setattr__(self, "op_cost_ms", tuple(float(c) for c in self.op_cost_ms))
        object.__setattr__(self, "counter_profile",
                           tuple((float(s), float(e)) for s, e in self.counter_profile))
        if len(self.op_cost_ms) != len(operator_workloads()):
            raise ValidationError(f"{self.device_id}: expected 15 operator costs")
        if len(self.counter_profile) != NUM_EVENTS:
            raise ValidationError(f"{self.device_id}: expected {NUM_EVENTS} counter profile entries")
        if self.base_overhead_ms <= 0 or min(self.op_cost_ms) < 0:
            raise ValidationError(f"{self.device_id}: costs must be positive")
        if self.interaction_coeff < 0 or self.noise_cv < 0:
            raise ValidationError(f"{self.device_id}: interaction_coeff and noise_cv must be >= 0")


def _pool_config(index, seeds, config):
    """Generation knobs of the index-th device of a pool over `seeds`."""
    kind = "cpu" if index < 3 else "gpu"
    shared_proxy = seeds[-2] if len(seeds) >= 5 else None
    proxy = shared_proxy if (kind == "gpu" and index >= len(seeds) - 2) else None
    return SimConfig(kind=kind, noise_cv=config.noise_cv,
                     interaction_range=config.interaction_range,
                     cost_sigma=config.cost_sigma, proxy_cpu_seed=proxy)


def make_device(seed, config=None):
    """Generate the simulated device of a seed.

    Without a config, seeds of the default pool give the same device as
    default_pool() (so "sim-<seed>" names one device) and other seeds use
    SimConfig().

    Args:
        seed (int): device seed; the device id is "sim-<seed>"
        config (SimConfig): generation knobs

    Returns:
        SimDevice
    """
    if config is None:
        config = SimConfig()
        if seed in DEFAULT_POOL_SEEDS:
            config = _pool_config(DEFAULT_POOL_SEEDS.index(seed), DEFAULT_POOL_SEEDS, config)
    rng = np.random.default_rng([seed, _COST_SALT])
    speed = rng.lognormal(0.0, 0.4)
    growth = rng.uniform(*_WIDTH_GROWTH[config.kind])
    costs = []
    for w in operator_workloads():
        base = _KIND_BASE_MS[config.kind][w.kind]
        jitter = rng.lognormal(0.0, config.cost_sigma)
        costs.append(base * speed * (w.width / 16) ** growth * jitter)
    overhead = rng.uniform(*_OVERHEAD_MS[config.kind]) * speed
    interaction = rng.uniform(*config.interaction_range)

    proxy = seed if config.proxy_cpu_seed is None else config.proxy_cpu_seed
    profile_rng = np.random.default_rng([proxy, _PROFILE_SALT])
    profile = [(10 ** (magnitude + profile_rng.uniform(-0.3, 0.3)), profile_rng.uniform(0.8, 1.2))
               for magnitude in _EVENT_MAGNITUDE]
    return SimDevice(device_id=f"sim-{seed}", seed=seed, kind=config.kind,
                     proxy_cpu_seed=proxy, base_overhead_ms=float(overhead),
                     op_cost_ms=costs, interaction_coeff=float(interaction),
                     noise_cv=config.noise_cv, counter_profile=profile)


def default_pool(seeds=DEFAULT_POOL_SEEDS, config=None):
    """Pool of 3 CPU-like devices followed by GPU-like ones.

    The last two GPU-like devices share one proxy-CPU parameter block, so
    their counter responses come from the same CPU while their costs differ.
    """
    config = config or SimConfig()
    seeds = list(seeds)
    return [make_device(seed, _pool_config(i, seeds, config)) for i, seed in enumerate(seeds)]


# ===== latency oracle =====

def _noise_factors(noise_cv, size, rng):
    # mean-one log-normal with the requested coefficient of variation
    sigma = np.sqrt(np.log1p(noise_cv ** 2))
    return np.exp(sigma * rng.standard_normal(size) - sigma ** 2 / 2)


def sim_latencies(d, archs, skel=None, noisy=False, rng=None):
    """Vectorized sim_latency over many architecture ids.

    Returns:
        numpy.ndarray of latencies in ms, in the order of archs.
    """
    skel = skel or NetworkSkeleton()
    archs = np.asarray([check_arch_id(a) for a in archs], dtype=int)
    ops_table, pairs_table = architecture_table()
    ops = ops_table[archs]
    costs = np.asarray(d.op_cost_ms)
    n_widths = len(skel.stage_widths)
    cells = np.zeros(len(archs))
    for s in range(n_widths):
        cells += costs[ops * n_widths + s].sum(axis=1)
    latency = d.base_overhead_ms + skel.cells_per_stage * cells * (
        1.0 + d.interaction_coeff * pairs_table[archs])
    if noisy and d.noise_cv > 0:
        if rng is None:
            rng = np.random.default_rng([d.seed, _NOISE_SALT])
        latency = latency * _noise_factors(d.noise_cv, len(archs), rng)
    return latency


def sim_latency(d, arch, skel=None, noisy=False, rng=None):
    """Latency of arch on simulated device d, in ms.

    base_overhead + K * sum over stages and edges of op_cost(op, stage width),
    with the cell sum scaled by (1 + interaction_coeff * adjacent conv pairs).
    With noisy=True a mean-one multiplicative noise of CV noise_cv is applied;
    with noisy=False the value is the deterministic ground truth.
    """
    return float(sim_latencies(d, [arch], skel, noisy=noisy, rng=rng)[0])


# ===== counter oracle =====

def sim_descriptor(d):
    """Descriptor of a simulated device from its power-law counter profile."""
    costs = np.asarray(d.op_cost_ms)
    counters = np.zeros((len(costs), len(CANONICAL_EVENTS)))
    for j, (scale, exponent) in enumerate(d.counter_profile):
        counters[:, j] = scale * costs ** exponent
    return HardwareDescriptor(device_id=d.device_id, counters=counters, op_latency_ms=costs)


# ===== accuracy oracle =====

@dataclass(frozen=True)
class AccuracyOracle:
    """Deterministic stand-in for trained accuracy of an architecture.

    A cell with no non-None path from input to output scores `floor`.
    Otherwise accuracy grows with the square root of the cell FLOP share,
    gains a bonus per skip edge, and carries a seeded jitter in [0, jitter).
    """
    floor: float = 0.1
    connected_bonus: float = 0.05
    flops_weight: float = 0.6
    skip_weight: float = 0.02
    jitter: float = 0.03
    seed: int = 0

    def __call__(self, arch):
        arch = check_arch_id(arch)
        cell = cell_graph(arch)
        live = nx.DiGraph()
        live.add_nodes_from(cell.nodes)
        live.add_edges_from((u, v) for u, v, op in cell.edges(data="op") if op != OpKind.NONE)
        if not nx.has_path(live, 0, 3):
            return self.floor
        share = cell_flops(arch, 16, 32, 32) / _MAX_CELL_FLOPS
        n_skip = sum(1 for op in arch_to_ops(arch) if op == OpKind.SKIP)
        digest = hashlib.sha256(f"{self.seed}:{arch}".encode()).digest()
        unit = int.from_bytes(digest[:8], "big") / 2 ** 64
        acc = (self.floor + self.connected_bonus + self.flops_weight * np.sqrt(share)
               + self.skip_weight * n_skip + self.jitter * unit)
        return float(min(acc, 1.0))


_ALL_CONV3X3 = sum(int(OpKind.CONV3X3) * 5 ** e for e in range(6))
_MAX_CELL_FLOPS = cell_flops(_ALL_CONV3X3, 16, 32, 32)


def sim_accuracy(arch, oracle=None):
    """Accuracy in [0, 1] of arch under the (default) accuracy oracle."""
    return (oracle or AccuracyOracle())(arch)


@functools.lru_cache(maxsize=8)
def accuracy_table(oracle=None):
    """sim_accuracy of every architecture id, as a read-only array."""
    oracle = oracle or AccuracyOracle()
    table = np.array([oracle(a) for a in range(NUM_ARCHITECTURES)])
    table.setflags(write=False)
    return table


# ===== device pool file =====

def save_device_pool(devices, path):
    write_json([asdict(d) for d in devices], path)


def load_device_pool(path):
    blocks = read_json(path)
    try:
        return [SimDevice(**block) for block in blocks]
    except TypeError as err:
        raise ParseError(f"malformed device block: {err}")
