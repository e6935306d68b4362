"""Hardware descriptors from Linux performance counters.

The counters are opened with the perf_event_open syscall through ctypes and
read as one group, so all events of a run are enabled and disabled together.
Only user-space events of the calling process are counted.
"""
import ctypes
import enum
import errno
import logging
import os
import platform
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, UnsupportedError, UsageError, ValidationError
from .io_utils import read_json, write_json
from .kernels import run_workload_loop
from .search_space import operator_workloads

__all__ = [
    "CounterEvent", "CANONICAL_EVENTS", "NUM_EVENTS", "NUM_WORKLOADS",
    "DESCRIPTOR_SIZE", "FEATURE_SIZE", "HardwareDescriptor",
    "descriptor_index", "latency_index", "counters_available",
    "CounterSession", "measure_counters", "build_descriptor",
    "descriptor_to_dict", "descriptor_from_dict", "save_descriptor",
    "load_descriptor",
]

logger = logging.getLogger(__name__)


class CounterEvent(str, enum.Enum):
    """The ten counter events of a descriptor, in layout order."""
    CPU_CYCLES = "cpu-cycles"
    INSTRUCTIONS = "instructions"
    CACHE_REFERENCES = "cache-references"
    CACHE_MISSES = "cache-misses"
    L1_DCACHE_LOADS = "L1-dcache-loads"
    L1_DCACHE_LOAD_MISSES = "L1-dcache-load-misses"
    LLC_LOAD_MISSES = "LLC-load-misses"
    LLC_LOADS = "LLC-loads"
    LLC_STORE_MISSES = "LLC-store-misses"
    LLC_STORES = "LLC-stores"


CANONICAL_EVENTS = tuple(CounterEvent)
NUM_EVENTS = len(CANONICAL_EVENTS)
NUM_WORKLOADS = len(operator_workloads())
DESCRIPTOR_SIZE = NUM_WORKLOADS * NUM_EVENTS
FEATURE_SIZE = DESCRIPTOR_SIZE + NUM_WORKLOADS


# ===== descriptor =====

def descriptor_index(workload, event):
    """Flattened position of (workload i, event j)."""
    return workload * NUM_EVENTS + event


def latency_index(workload):
    """Flattened position of the operator latency of workload i."""
    return DESCRIPTOR_SIZE + workload


@dataclass(eq=False)
class HardwareDescriptor:
    """Per-device counter readings (15 workloads x 10 events) and operator latencies."""
    device_id: str
    counters: np.ndarray
    op_latency_ms: np.ndarray

    def __post_init__(self):
        self.counters = np.asarray(self.counters, dtype=float)
        self.op_latency_ms = np.asarray(self.op_latency_ms, dtype=float)
        if self.counters.shape != (NUM_WORKLOADS, NUM_EVENTS):
            raise ValidationError(
                f"{self.device_id}: counters must be {NUM_WORKLOADS}x{NUM_EVENTS}, "
                f"got {self.counters.shape}")
        if self.op_latency_ms.shape != (NUM_WORKLOADS,):
            raise ValidationError(
                f"{self.device_id}: expected {NUM_WORKLOADS} operator latencies, "
                f"got {self.op_latency_ms.shape}")
        if not (np.all(np.isfinite(self.counters)) and np.all(self.counters >= 0)):
            raise ValidationError(f"{self.device_id}: counters must be finite and >= 0")
        if not (np.all(np.isfinite(self.op_latency_ms)) and np.all(self.op_latency_ms >= 0)):
            raise ValidationError(f"{self.device_id}: operator latencies must be finite and >= 0")

    @property
    def flattened(self):
        """150 counter values (workload-major) followed by 15 latencies."""
        return np.concatenate([self.counters.ravel(), self.op_latency_ms])

    def features(self, include_latency=True):
        """Raw model input: 165 values, or the 150 counters alone."""
        return self.flattened if include_latency else self.counters.ravel().copy()

    def __eq__(self, other):
        if not isinstance(other, HardwareDescriptor):
            return NotImplemented
        return (self.device_id == other.device_id
                and np.array_equal(self.counters, other.counters)
                and np.array_equal(self.op_latency_ms, other.op_latency_ms))


def descriptor_to_dict(desc):
    return {
        "device_id": desc.device_id,
        "events": [e.value for e in CANONICAL_EVENTS],
        "workloads": [w.name for w in operator_workloads()],
        "counters": desc.counters.tolist(),
        "op_latency_ms": desc.op_latency_ms.tolist(),
    }


def descriptor_from_dict(data):
    try:
        events = data.get("events", [e.value for e in CANONICAL_EVENTS])
        workloads = data.get("workloads", [w.name for w in operator_workloads()])
        if list(events) != [e.value for e in CANONICAL_EVENTS]:
            raise ValidationError(f"unexpected event layout: {events}")
        if list(workloads) != [w.name for w in operator_workloads()]:
            raise ValidationError(f"unexpected workload layout: {workloads}")
        return HardwareDescriptor(device_id=str(data["device_id"]),
                                  counters=data["counters"],
                                  op_latency_ms=data["op_latency_ms"])
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"malformed descriptor: {err}")


def save_descriptor(desc, path):
    write_json(descriptor_to_dict(desc), path)


def load_descriptor(path):
    return descriptor_from_dict(read_json(path))


# ===== perf_event_open plumbing =====

_SYSCALL_NUMBERS = {"x86_64": 298, "aarch64": 241, "riscv64": 241}

PERF_TYPE_HARDWARE = 0
PERF_TYPE_HW_CACHE = 3

PERF_FORMAT_TOTAL_TIME_ENABLED = 1 << 0
PERF_FORMAT_TOTAL_TIME_RUNNING = 1 << 1
PERF_FORMAT_GROUP = 1 << 3

PERF_EVENT_IOC_ENABLE = 0x2400
PERF_EVENT_IOC_DISABLE = 0x2401
PERF_EVENT_IOC_RESET = 0x2403
PERF_IOC_FLAG_GROUP = 1

FLAG_DISABLED = 1 << 0
FLAG_EXCLUDE_KERNEL = 1 << 5
FLAG_EXCLUDE_HV = 1 << 6

# hw cache config = cache id | (op << 8) | (result << 16)
_L1D, _LL = 0, 2
_OP_READ, _OP_WRITE = 0, 1
_ACCESS, _MISS = 0, 1

_EVENT_CONFIG = {
    CounterEvent.CPU_CYCLES: (PERF_TYPE_HARDWARE, 0),
    CounterEvent.INSTRUCTIONS: (PERF_TYPE_HARDWARE, 1),
    CounterEvent.CACHE_REFERENCES: (PERF_TYPE_HARDWARE, 2),
    CounterEvent.CACHE_MISSES: (PERF_TYPE_HARDWARE, 3),
    CounterEvent.L1_DCACHE_LOADS: (PERF_TYPE_HW_CACHE, _L1D | _OP_READ << 8 | _ACCESS << 16),
    CounterEvent.L1_DCACHE_LOAD_MISSES: (PERF_TYPE_HW_CACHE, _L1D | _OP_READ << 8 | _MISS << 16),
    CounterEvent.LLC_LOAD_MISSES: (PERF_TYPE_HW_CACHE, _LL | _OP_READ << 8 | _MISS << 16),
    CounterEvent.LLC_LOADS: (PERF_TYPE_HW_CACHE, _LL | _OP_READ << 8 | _ACCESS << 16),
    CounterEvent.LLC_STORE_MISSES: (PERF_TYPE_HW_CACHE, _LL | _OP_WRITE << 8 | _MISS << 16),
    CounterEvent.LLC_STORES: (PERF_TYPE_HW_CACHE, _LL | _OP_WRITE << 8 | _ACCESS << 16),
}


class _PerfEventAttr(ctypes.Structure):
    """First 72 bytes of struct perf_event_attr (PERF_ATTR_SIZE_VER1)."""
    _fields_ = [
        ("type", ctypes.c_uint),
        ("size", ctypes.c_uint),
        ("config", ctypes.c_ulonglong),
        ("sample_period", ctypes.c_ulonglong),
        ("sample_type", ctypes.c_ulonglong),
        ("read_format", ctypes.c_ulonglong),
        ("flags", ctypes.c_ulonglong),
        ("wakeup_events", ctypes.c_uint),
        ("bp_type", ctypes.c_uint),
        ("config1", ctypes.c_ulonglong),
        ("config2", ctypes.c_ulonglong),
    ]


_libc = None


def _get_libc():
    global _libc
    if platform.system() != "Linux":
        raise UnsupportedError(f"perf_event_open is Linux-only (running on {platform.system()})")
    if platform.machine() not in _SYSCALL_NUMBERS:
        raise UnsupportedError(f"no perf_event_open syscall number for {platform.machine()}")
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
    return _libc


def _os_error_reason(err):
    reason = os.strerror(err)
    if err in (errno.EACCES, errno.EPERM):
        reason += " (check /proc/sys/kernel/perf_event_paranoid or CAP_PERFMON)"
    elif err in (errno.ENOENT, errno.EOPNOTSUPP, errno.ENODEV):
        reason += " (event not supported by this PMU)"
    return reason


def _perf_event_open(event, group_fd, leader):
    libc = _get_libc()
    ev_type, config = _EVENT_CONFIG[CounterEvent(event)]
    attr = _PerfEventAttr()
    attr.type = ev_type
    attr.size = ctypes.sizeof(_PerfEventAttr)
    attr.config = config
    attr.read_format = (PERF_FORMAT_GROUP | PERF_FORMAT_TOTAL_TIME_ENABLED
                        | PERF_FORMAT_TOTAL_TIME_RUNNING)
    attr.flags = FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV | (FLAG_DISABLED if leader else 0)
    fd = libc.syscall(ctypes.c_long(_SYSCALL_NUMBERS[platform.machine()]),
                      ctypes.byref(attr), ctypes.c_int(0), ctypes.c_int(-1),
                      ctypes.c_int(group_fd), ctypes.c_ulong(0))
    if fd < 0:
        err = ctypes.get_errno()
        raise UnsupportedError(f"{CounterEvent(event).value}: {_os_error_reason(err)}")
    return fd


def _ioctl(fd, request):
    if _get_libc().ioctl(fd, request, PERF_IOC_FLAG_GROUP) != 0:
        err = ctypes.get_errno()
        raise UnsupportedError(f"ioctl failed: {_os_error_reason(err)}")


class _CounterGroup:
    """One perf group: a leader fd plus member fds, read in one call."""

    def __init__(self, events):
        self.events = list(events)
        self.fds = []
        try:
            for event in self.events:
                leader_fd = self.fds[0] if self.fds else -1
                self.fds.append(_perf_event_open(event, leader_fd, leader=not self.fds))
        except UnsupportedError:
            self.close()
            raise

    def start(self):
        _ioctl(self.fds[0], PERF_EVENT_IOC_RESET)
        _ioctl(self.fds[0], PERF_EVENT_IOC_ENABLE)

    def stop(self):
        _ioctl(self.fds[0], PERF_EVENT_IOC_DISABLE)

    def read(self):
        """Return (values, time_enabled, time_running)."""
        n = len(self.events)
        raw = os.read(self.fds[0], 8 * (3 + n))
        nr, enabled, running, *values = struct.unpack(f"{3 + n}Q", raw)
        if nr != n:
            raise UnsupportedError(f"group read returned {nr} values, expected {n}")
        return np.array(values, dtype=float), enabled, running

    def close(self):
        for fd in reversed(self.fds):
            os.close(fd)
        self.fds = []


_SESSION_LOCK = threading.Lock()


class CounterSession:
    """Exclusive owner of the process's counters while it is open.

    Use as a context manager; a second session in the same process raises
    UsageError.
    """

    def __init__(self, events=CANONICAL_EVENTS):
        self.events = [CounterEvent(e) for e in events]
        self._groups = None

    def __enter__(self):
        if not _SESSION_LOCK.acquire(blocking=False):
            raise UsageError("another counter session is already active in this process")
        try:
            self._groups = self._open_groups()
        except BaseException:
            _SESSION_LOCK.release()
            raise
        return self

    def __exit__(self, *exc):
        for group in self._groups or []:
            group.close()
        self._groups = None
        _SESSION_LOCK.release()
        return False

    def _open_groups(self):
        return [_CounterGroup(self.events)]

    def _split(self):
        # The PMU cannot host all events at once: fall back to two halves
        # measured over separate identical runs.
        for group in self._groups:
            group.close()
        half = (len(self.events) + 1) // 2
        logger.warning("counter group of %d events multiplexed; using two groups of <= %d",
                       len(self.events), half)
        self._groups = [_CounterGroup(self.events[:half]), _CounterGroup(self.events[half:])]

    def measure(self, run):
        """Count events over run(); returns (counts, list of run() results)."""
        counts, results = self._measure_groups(run)
        if counts is None:
            self._split()
            counts, results = self._measure_groups(run)
            if counts is None:
                raise UnsupportedError("counter groups could not be scheduled without multiplexing")
        return counts, results

    def _measure_groups(self, run):
        counts, results = [], []
        for group in self._groups:
            group.start()
            results.append(run())
            group.stop()
            values, enabled, running = group.read()
            if running == 0 or running < enabled:
                return None, results
            counts.append(values)
        return np.concatenate(counts), results


def counters_available():
    """Can this process open the canonical counter events?"""
    try:
        with CounterSession():
            return True
    except (UnsupportedError, UsageError, OSError):
        return False


# ===== measurement =====

def measure_counters(w, events=CANONICAL_EVENTS, iterations=100, session=None):
    """Count events while running workload w in a loop.

    Args:
        w (OperatorWorkload): workload to run
        events (sequence of CounterEvent): events to count, canonical by default
        iterations (int): loop iterations passed to run_workload_loop
        session (CounterSession): open session to reuse; one is opened when None

    Returns:
        (per-iteration counts as numpy.ndarray, loop duration in milliseconds)

    Raises:
        UnsupportedError: if the counter interface cannot be used.
    """
    if session is None:
        with CounterSession(events) as own:
            return measure_counters(w, events, iterations, session=own)
    counts, durations = session.measure(lambda: run_workload_loop(w, iterations))
    logger.debug("%s: %s", w.name, dict(zip((e.value for e in session.events), counts)))
    return counts / iterations, float(np.mean(durations))


def build_descriptor(device_id="host", iterations=100):
    """Characterize this host by counting events over all 15 workloads.

    Returns:
        HardwareDescriptor whose op_latency_ms holds the per-iteration loop
        duration of each workload.
    """
    counters = np.zeros((NUM_WORKLOADS, NUM_EVENTS))
    latency = np.zeros(NUM_WORKLOADS)
    with CounterSession() as session:
        for i, w in enumerate(operator_workloads()):
            counts, duration_ms = measure_counters(w, iterations=iterations, session=session)
            counters[i] = counts
            latency[i] = duration_ms / iterations
    logger.info("built descriptor for %s (%d iterations per workload)", device_id, iterations)
    return HardwareDescriptor(device_id=device_id, counters=counters, op_latency_ms=latency)
