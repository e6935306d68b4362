"""Initial, adaptation and weighted training sets of latency samples."""
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .devicesim import SimDevice, sim_descriptor, sim_latencies
from .errors import DomainError, ParseError, ValidationError
from .io_utils import read_json, write_json
from .hwcounters import build_descriptor, descriptor_from_dict, descriptor_to_dict
from .kernels import DEFAULT_REPEATS, run_network
from .search_space import NUM_ARCHITECTURES, NetworkSkeleton, check_arch_id

__all__ = [
    "LatencySample", "SampleSet", "HostDevice", "SAMPLE_COLUMNS",
    "select_training_architectures", "adaptation_architectures",
    "device_descriptor", "measure_latencies", "collect_initial",
    "collect_adaptation", "build_training_set", "save_samples", "load_samples",
]

logger = logging.getLogger(__name__)

SAMPLE_COLUMNS = ["device_id", "arch_id", "latency_ms", "weight"]
_INITIAL_SALT = 7
_ADAPT_SALT = 13


@dataclass(frozen=True)
class LatencySample:
    """One (architecture, device, latency) triplet and its training weight."""
    device_id: str
    arch: int
    latency_ms: float
    weight: float = 1.0

    @property
    def key(self):
        return (self.device_id, self.arch)


@dataclass
class SampleSet:
    """Samples plus the descriptors of every device they reference."""
    samples: list = field(default_factory=list)
    descriptors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def validate(self):
        for i, s in enumerate(self.samples):
            if s.device_id not in self.descriptors:
                raise ValidationError(f"sample {i}: no descriptor for device {s.device_id!r}")
            if not (s.latency_ms > 0 and math.isfinite(s.latency_ms)):
                raise ValidationError(f"sample {i}: latency must be positive, got {s.latency_ms}")
            if not (s.weight > 0 and math.isfinite(s.weight)):
                raise ValidationError(f"sample {i}: weight must be positive, got {s.weight}")
        return self

    def device_ids(self):
        """Device ids in order of first appearance."""
        return list(dict.fromkeys(s.device_id for s in self.samples))

    def for_device(self, device_id):
        return SampleSet([s for s in self.samples if s.device_id == device_id],
                         {device_id: self.descriptors[device_id]})

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return self.samples == other.samples and self.descriptors == other.descriptors


@dataclass(frozen=True)
class HostDevice:
    """The machine running this process, measured with the reference kernels."""
    device_id: str = "host"
    repeats: int = DEFAULT_REPEATS
    counter_iterations: int = 100

    def __post_init__(self):
        if self.repeats < 1 or self.counter_iterations < 1:
            raise ValidationError("repeats and counter_iterations must be >= 1")


# ===== architecture selection =====

def select_training_architectures(n, seed=0):
    """Uniformly sample n distinct architecture ids (ascending) from the space."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or not 1 <= n <= NUM_ARCHITECTURES:
        raise DomainError(f"n must be in [1, {NUM_ARCHITECTURES}], got {n}")
    rng = np.random.default_rng([seed, _INITIAL_SALT])
    return sorted(int(a) for a in rng.choice(NUM_ARCHITECTURES, size=int(n), replace=False))


def adaptation_architectures(k, seed=0):
    """First k ids of a seeded permutation of the whole space.

    A smaller k for the same seed always yields a prefix of a larger k.
    """
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 0 <= k <= NUM_ARCHITECTURES:
        raise DomainError(f"k must be in [0, {NUM_ARCHITECTURES}], got {k}")
    rng = np.random.default_rng([seed, _ADAPT_SALT])
    return [int(a) for a in rng.permutation(NUM_ARCHITECTURES)[:k]]


# ===== measurement sources =====

def _check_source(device, source):
    if source not in ("sim", "host"):
        raise DomainError(f"source must be 'sim' or 'host', got {source!r}")
    if source == "sim" and not isinstance(device, SimDevice):
        raise DomainError(f"{device!r} is not a simulated device")
    if source == "host" and not isinstance(device, HostDevice):
        raise DomainError(f"{device!r} is not a host device")


def device_descriptor(device, source="sim"):
    """Descriptor of a device from its source; propagates UnsupportedError on host."""
    _check_source(device, source)
    if source == "sim":
        return sim_descriptor(device)
    return build_descriptor(device.device_id, iterations=device.counter_iterations)


def measure_latencies(device, archs, source="sim", skel=None, seed=0):
    """Measured latency (ms) of each arch on device.

    Simulated measurements carry the device's noise, drawn from a stream
    seeded by (seed, device seed). Host measurements are mean-of-repeats
    runs of the reference network.
    """
    _check_source(device, source)
    skel = skel or NetworkSkeleton()
    if source == "sim":
        rng = np.random.default_rng([seed, device.seed])
        return [float(v) for v in sim_latencies(device, archs, skel, noisy=True, rng=rng)]
    return [run_network(a, skel, repeats=device.repeats).mean_ms for a in archs]


# ===== sets =====

def collect_initial(devices, archs, source="sim", skel=None, seed=0):
    """Initial set: one sample per (device, arch) pair.

    Args:
        devices (list): SimDevice or HostDevice objects matching source
        archs (list of int): architecture ids measured on every device
        source (str): "sim" or "host"
        skel (NetworkSkeleton): macro skeleton
        seed (int): measurement-noise seed for simulated devices

    Returns:
        SampleSet with unit weights.
    """
    archs = [check_arch_id(a) for a in archs]
    result = SampleSet()
    for device in devices:
        result.descriptors[device.device_id] = device_descriptor(device, source)
        latencies = measure_latencies(device, archs, source, skel, seed)
        result.samples.extend(LatencySample(device.device_id, a, y) for a, y in zip(archs, latencies))
        logger.info("collected %d samples from %s", len(archs), device.device_id)
    return result.validate()


def collect_adaptation(device, k, seed=0, source="sim", skel=None):
    """Adaptation set: k samples from the target device.

    Architectures come from the whole search space, independently of any
    initial-set selection.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    archs = adaptation_architectures(k, seed)
    result = SampleSet(descriptors={device.device_id: device_descriptor(device, source)})
    latencies = measure_latencies(device, archs, source, skel, seed=seed + 1)
    result.samples = [LatencySample(device.device_id, a, y) for a, y in zip(archs, latencies)]
    return result.validate()


def build_training_set(initial, adaptation=None):
    """Union of the initial and adaptation sets with few-shot weights.

    Initial samples weigh 1/sqrt(|X|) and adaptation samples 1/sqrt(|X^|).
    An initial sample whose (device, arch) also appears in the adaptation set
    is dropped in favour of the adaptation copy before |X| is counted.
    """
    if adaptation is not None and not adaptation.samples:
        logger.warning("empty adaptation set; training on the initial set only")
    adaptation = adaptation or SampleSet()
    adapt_keys = {s.key for s in adaptation.samples}
    kept = [s for s in initial.samples if s.key not in adapt_keys]
    if len(kept) < len(initial.samples):
        logger.info("dropped %d initial samples duplicated by adaptation samples",
                    len(initial.samples) - len(kept))
    if not kept and not adaptation.samples:
        raise DomainError("training set would be empty")

    samples = []
    if kept:
        w_init = 1.0 / math.sqrt(len(kept))
        samples += [replace(s, weight=w_init) for s in kept]
    if adaptation.samples:
        w_adapt = 1.0 / math.sqrt(len(adaptation.samples))
        samples += [replace(s, weight=w_adapt) for s in adaptation.samples]
    descriptors = dict(initial.descriptors)
    descriptors.update(adaptation.descriptors)
    return SampleSet(samples, descriptors).validate()


# ===== persistence =====

def _descriptor_path(path):
    return f"{path}.descriptors.json"


def save_samples(sample_set, path):
    """Write the sample CSV and its descriptor sidecar (<path>.descriptors.json)."""
    frame = pd.DataFrame([(s.device_id, s.arch, s.latency_ms, s.weight) for s in sample_set.samples],
                         columns=SAMPLE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    write_json([descriptor_to_dict(d) for d in sample_set.descriptors.values()], _descriptor_path(path))


def load_samples(path, descriptors=None):
    """Read a sample CSV.

    Args:
        path (str): CSV written by save_samples
        descriptors (dict): device_id -> HardwareDescriptor; when None the
            sidecar next to the CSV is read (if it exists)

    Returns:
        SampleSet

    Raises:
        ParseError: malformed rows, with the 1-based file line number.
        ValidationError: a sample references a device without a descriptor.
    """
    try:
        frame = pd.read_csv(path, dtype={"device_id": str}, float_precision="round_trip",
                            encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise ParseError(f"{path}: {err}")
    missing = [c for c in SAMPLE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}", line=1)

    samples = []
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            arch = check_arch_id(int(row.arch_id))
            latency, weight = float(row.latency_ms), float(row.weight)
        except (TypeError, ValueError) as err:
            raise ParseError(f"{path}: {err}", line=row_no)
        if pd.isna(row.device_id):
            raise ParseError(f"{path}: empty device_id", line=row_no)
        if not (latency > 0 and math.isfinite(latency)):
            raise ParseError(f"{path}: latency must be positive, got {latency}", line=row_no)
        if not (weight > 0 and math.isfinite(weight)):
            raise ParseError(f"{path}: weight must be positive, got {weight}", line=row_no)
        samples.append(LatencySample(row.device_id, arch, latency, weight))

    if descriptors is None:
        descriptors = {}
        if os.path.exists(_descriptor_path(path)):
            blocks = read_json(_descriptor_path(path))
            descriptors = {d.device_id: d for d in map(descriptor_from_dict, blocks)}
    return SampleSet(samples, dict(descriptors)).validate()
