import enum
import functools
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .errors import DomainError, MalformedEncodingError, ParseError, ValidationError

__all__ = [
    "OpKind", "OperatorWorkload", "NetworkSkeleton",
    "NUM_EDGES", "NUM_OP_KINDS", "NUM_ARCHITECTURES", "CELL_EDGES",
    "STAGE_WIDTHS", "CONV_KINDS",
    "check_arch_id", "arch_to_ops", "ops_to_arch", "enumerate_architectures",
    "encode", "decode", "encoding_to_string", "encoding_from_string",
    "operator_workloads", "workload_index", "cell_graph",
    "adjacent_conv_pairs", "architecture_table", "op_flops", "cell_flops", "flops",
    "save_architectures", "load_architectures",
]

# ===== constants =====

# Edges of the 4-node complete DAG, in canonical order. Edge e is the e-th
# base-5 digit of an architecture id.
CELL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
NUM_EDGES = len(CELL_EDGES)
STAGE_WIDTHS = (16, 32, 64)


class OpKind(enum.IntEnum):
    """Edge operations of the cell search space, in canonical column order."""
    NONE = 0
    SKIP = 1
    CONV1X1 = 2
    CONV3X3 = 3
    AVGPOOL3X3 = 4

    @property
    def label(self):
        return _OP_LABELS[self]


_OP_LABELS = {
    OpKind.NONE: "none",
    OpKind.SKIP: "skip",
    OpKind.CONV1X1: "conv1x1",
    OpKind.CONV3X3: "conv3x3",
    OpKind.AVGPOOL3X3: "avgpool3x3",
}

NUM_OP_KINDS = len(OpKind)
NUM_ARCHITECTURES = NUM_OP_KINDS ** NUM_EDGES
CONV_KINDS = frozenset({OpKind.CONV1X1, OpKind.CONV3X3})


@dataclass(frozen=True)
class OperatorWorkload:
    """One (operation kind, channel width) pair of the search space."""
    kind: OpKind
    width: int

    @property
    def index(self):
        return workload_index(self.kind, self.width)

    @property
    def name(self):
        return f"{self.kind.label}_{self.width}"


@dataclass(frozen=True)
class NetworkSkeleton:
    """Macro skeleton every cell is instantiated into.

    stem conv3x3 -> [K cells @16] -> reduce -> [K cells @32] -> reduce ->
    [K cells @64] -> global average pool -> linear. A reduction is a stride-2
    2x2 average pool followed by a conv1x1 that doubles the width.
    """
    height: int = 32
    width: int = 32
    in_channels: int = 3
    stage_widths: tuple = STAGE_WIDTHS
    cells_per_stage: int = 1
    num_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(self.stage_widths))
        if self.cells_per_stage < 1:
            raise ValidationError(f"cells_per_stage must be >= 1, got {self.cells_per_stage}")
        if self.in_channels < 1 or self.num_classes < 1:
            raise ValidationError("in_channels and num_classes must be >= 1")
        if tuple(self.stage_widths) != STAGE_WIDTHS:
            raise ValidationError(f"stage widths are fixed to {STAGE_WIDTHS}")
        divisor = 2 ** (len(self.stage_widths) - 1)
        if self.height % divisor or self.width % divisor:
            raise ValidationError(
                f"input {self.height}x{self.width} must be divisible by {divisor}")
        if min(self.height, self.width) // divisor < 3:
            raise ValidationError("last stage must keep at least a 3x3 feature map")

    @property
    def num_cells(self):
        return len(self.stage_widths) * self.cells_per_stage

    def stage_shapes(self):
        """(channels, height, width) seen by the cells of each stage."""
        return [(c, self.height // 2 ** s, self.width // 2 ** s)
                for s, c in enumerate(self.stage_widths)]


# ===== ids and encodings =====

def check_arch_id(arch):
    """Raise DomainError unless arch is a valid architecture id."""
    if isinstance(arch, (bool, np.bool_)) or not isinstance(arch, (int, np.integer)):
        raise DomainError(f"architecture id must be an integer, got {arch!r}")
    if not 0 <= arch < NUM_ARCHITECTURES:
        raise DomainError(f"architecture id {arch} outside [0, {NUM_ARCHITECTURES - 1}]")
    return int(arch)


def arch_to_ops(arch):
    """Edge operations of arch, in canonical edge order."""
    arch = check_arch_id(arch)
    ops = []
    for _ in range(NUM_EDGES):
        arch, digit = divmod(arch, NUM_OP_KINDS)
        ops.append(OpKind(digit))
    return tuple(ops)


def ops_to_arch(ops):
    """Inverse of arch_to_ops."""
    ops = list(ops)
    if len(ops) != NUM_EDGES:
        raise DomainError(f"expected {NUM_EDGES} edge operations, got {len(ops)}")
    return sum(int(OpKind(op)) * NUM_OP_KINDS ** e for e, op in enumerate(ops))


def enumerate_architectures():
    """All architecture ids of the search space, ascending."""
    return list(range(NUM_ARCHITECTURES))


def encode(arch):
    """One-hot operations matrix of arch (rows are edges, columns are OpKinds).

    Args:
        arch (int): architecture id

    Returns:
        numpy.ndarray of shape (6, 5) and dtype uint8.
    """
    enc = np.zeros((NUM_EDGES, NUM_OP_KINDS), dtype=np.uint8)
    enc[np.arange(NUM_EDGES), [int(op) for op in arch_to_ops(arch)]] = 1
    return enc


def decode(enc):
    """Architecture id of a one-hot operations matrix.

    Accepts the (6, 5) matrix or its flattened 30-value form.
    """
    enc = np.asarray(enc)
    if enc.size != NUM_EDGES * NUM_OP_KINDS:
        raise MalformedEncodingError(
            f"encoding must have {NUM_EDGES * NUM_OP_KINDS} values, got {enc.size}")
    enc = enc.reshape(NUM_EDGES, NUM_OP_KINDS)
    if not np.all((enc == 0) | (enc == 1)):
        raise MalformedEncodingError("encoding values must be 0 or 1")
    sums = enc.sum(axis=1)
    bad = np.flatnonzero(sums != 1)
    if bad.size:
        raise MalformedEncodingError(
            f"row {int(bad[0])} of the encoding sums to {int(sums[bad[0]])}, expected 1")
    return ops_to_arch(int(k) for k in enc.argmax(axis=1))


def encoding_to_string(enc):
    """Row-major '0'/'1' string of an encoding (30 characters)."""
    return "".join(str(int(v)) for v in np.asarray(enc).ravel())


def encoding_from_string(text):
    if len(text) != NUM_EDGES * NUM_OP_KINDS or set(text) - {"0", "1"}:
        raise MalformedEncodingError(f"not a 30-character 0/1 encoding: {text!r}")
    return np.array([int(c) for c in text], dtype=np.uint8).reshape(NUM_EDGES, NUM_OP_KINDS)


# ===== operator workloads =====

def operator_workloads():
    """The 15 operator workloads, kind-major and width-minor."""
    return [OperatorWorkload(kind, width) for kind in OpKind for width in STAGE_WIDTHS]


def workload_index(kind, width):
    if width not in STAGE_WIDTHS:
        raise DomainError(f"width {width} not in {STAGE_WIDTHS}")
    return int(OpKind(kind)) * len(STAGE_WIDTHS) + STAGE_WIDTHS.index(width)


# ===== cell structure =====

def cell_graph(arch):
    """Build the cell of arch as a networkx DiGraph.

    Nodes are 0..3; every edge carries its `op` (OpKind) and its canonical
    `index`. None edges are kept so the graph always has all 6 edges.
    """
    cell = nx.DiGraph()
    cell.add_nodes_from(range(4))
    for e, ((src, dst), op) in enumerate(zip(CELL_EDGES, arch_to_ops(arch))):
        cell.add_edge(src, dst, op=op, index=e)
    return cell


def adjacent_conv_pairs(arch):
    """Number of (u->v, v->w) edge pairs where both edges are convolutions."""
    cell = cell_graph(arch)
    pairs = 0
    for node in cell.nodes:
        n_in = sum(1 for _, _, op in cell.in_edges(node, data="op") if op in CONV_KINDS)
        n_out = sum(1 for _, _, op in cell.out_edges(node, data="op") if op in CONV_KINDS)
        pairs += n_in * n_out
    return pairs


@functools.lru_cache(maxsize=1)
def architecture_table():
    """Edge operations and conv-pair counts of every architecture.

    Returns:
        (ops, pairs): int arrays of shape (15625, 6) and (15625,), indexed by
        architecture id. Both are read-only.
    """
    ids = np.arange(NUM_ARCHITECTURES)
    ops = np.stack([(ids // NUM_OP_KINDS ** e) % NUM_OP_KINDS for e in range(NUM_EDGES)], axis=1)
    conv = np.isin(ops, [int(k) for k in CONV_KINDS]).astype(int)
    pairs = np.zeros(NUM_ARCHITECTURES, dtype=int)
    for node in range(4):
        into = [e for e, (_, dst) in enumerate(CELL_EDGES) if dst == node]
        out = [e for e, (src, _) in enumerate(CELL_EDGES) if src == node]
        if into and out:
            pairs += conv[:, into].sum(axis=1) * conv[:, out].sum(axis=1)
    ops.setflags(write=False)
    pairs.setflags(write=False)
    return ops, pairs


# ===== FLOPs =====

def op_flops(kind, channels, height, width):
    """FLOPs (2 x multiply-accumulates) of one same-size cell operation."""
    kind = OpKind(kind)
    if kind == OpKind.CONV1X1:
        return 2 * channels * channels * height * width
    if kind == OpKind.CONV3X3:
        return 2 * 9 * channels * channels * height * width
    return 0


def cell_flops(arch, channels, height, width):
    return sum(op_flops(op, channels, height, width) for op in arch_to_ops(arch))


def flops(arch, skel=None):
    """FLOPs of the full network built from arch.

    Counts every convolution (stem, cells, reductions) and the head linear
    map; pools, skips and None edges are free.

    Args:
        arch (int): architecture id
        skel (NetworkSkeleton): macro skeleton, defaults to NetworkSkeleton()

    Returns:
        int FLOP count.
    """
    skel = skel or NetworkSkeleton()
    shapes = skel.stage_shapes()
    total = 2 * 9 * skel.in_channels * shapes[0][0] * skel.height * skel.width
    for s, (c, h, w) in enumerate(shapes):
        total += skel.cells_per_stage * cell_flops(arch, c, h, w)
        if s + 1 < len(shapes):
            c_next, h_next, w_next = shapes[s + 1]
            total += 2 * c * c_next * h_next * w_next
    total += 2 * shapes[-1][0] * skel.num_classes
    return total


# ===== architecture lists =====

def save_architectures(archs, path):
    """Write newline-delimited architecture ids."""
    with open(path, "w", encoding="utf-8") as f:
        for arch in archs:
            f.write(f"{check_arch_id(arch)}\n")


def load_architectures(path):
    archs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                archs.append(check_arch_id(int(line)))
            except (ValueError, DomainError) as err:
                raise ParseError(f"invalid architecture id {line!r} ({err})", line=line_no)
    return archs
