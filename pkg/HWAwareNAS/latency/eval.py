"""Error-bound accuracy, leave-one-device-out cross-validation, descriptor
distance maps and Pareto-front identification.
"""
import concurrent.futures
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .baselines import build_lut, fit_flops_scale, flops_predict, lut_predict_many, measure_layerwise_table
from .dataset import (SampleSet, build_training_set, collect_adaptation, collect_initial,
                      select_training_architectures)
from .devicesim import SimDevice, sim_descriptor, sim_latencies
from .errors import DomainError, LatencyToolkitError, ParseError, UsageError, ValidationError
from .hwcounters import HardwareDescriptor
from .io_utils import read_json, write_json
from .predictor import ModelConfig, descriptor_features, init_model, predict_architectures, train
from .search_space import NUM_ARCHITECTURES, NetworkSkeleton, check_arch_id

__all__ = [
    "ERROR_BOUNDS", "METHODS", "REPORT_COLUMNS", "PARETO_COLUMNS", "MEAN_ROW",
    "ErrorBoundReport", "LoocvConfig", "LoocvRow", "LoocvReport", "ParetoPoint",
    "error_bound_accuracy", "error_bound_report", "loocv",
    "descriptor_distance_matrix", "pareto_front", "pareto_agreement",
    "pareto_table", "emit_pareto", "emit_report", "load_report",
]

logger = logging.getLogger(__name__)

ERROR_BOUNDS = (0.01, 0.05, 0.10)
METHODS = ("predictor", "lut", "layerwise", "flops")
REPORT_COLUMNS = ["held_out_device", "method", "k_adapt", "acc_1pct", "acc_5pct", "acc_10pct", "n_eval"]
PARETO_COLUMNS = ["arch_id", "latency_ms", "accuracy", "on_true_front", "on_predicted_front"]
MEAN_ROW = "mean"


# ===== error-bound accuracy =====

@dataclass(frozen=True)
class ErrorBoundReport:
    """Fraction of samples within +-1%, +-5% and +-10% of the truth."""
    acc_1pct: float
    acc_5pct: float
    acc_10pct: float
    n_eval: int

    def accuracy(self, bound):
        return {0.01: self.acc_1pct, 0.05: self.acc_5pct, 0.10: self.acc_10pct}[bound]


def _relative_errors(preds, truths):
    preds = np.asarray(preds, dtype=float).ravel()
    truths = np.asarray(truths, dtype=float).ravel()
    if preds.size != truths.size:
        raise DomainError(f"{preds.size} predictions for {truths.size} truths")
    if truths.size == 0:
        raise DomainError("need at least one prediction")
    if not np.all(truths > 0):
        raise DomainError("true latencies must be positive")
    return np.abs(preds - truths) / truths


def error_bound_accuracy(preds, truths, bound):
    """Fraction of indices with |pred - truth| / truth <= bound."""
    if not bound >= 0:
        raise DomainError(f"bound must be >= 0, got {bound}")
    rel = _relative_errors(preds, truths)
    return int(np.count_nonzero(rel <= bound)) / rel.size


def error_bound_report(preds, truths):
    rel = _relative_errors(preds, truths)
    accs = [int(np.count_nonzero(rel <= b)) / rel.size for b in ERROR_BOUNDS]
    return ErrorBoundReport(*accs, n_eval=int(rel.size))


# ===== leave-one-device-out =====

@dataclass
class LoocvConfig:
    """Settings of a leave-one-device-out run.

    eval_archs=None evaluates every architecture of the search space.
    """
    n_train: int = 900
    k_values: tuple = (0, 3, 10)
    methods: tuple = METHODS
    seed: int = 0
    eval_archs: tuple = None
    jobs: int = 1

    def __post_init__(self):
        self.k_values = tuple(int(k) for k in self.k_values)
        self.methods = tuple(self.methods)
        if not self.k_values or min(self.k_values) < 0:
            raise ValidationError(f"k values must be >= 0, got {self.k_values}")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValidationError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if not 1 <= self.n_train <= NUM_ARCHITECTURES:
            raise ValidationError(f"n_train must be in [1, {NUM_ARCHITECTURES}], got {self.n_train}")
        if self.jobs < 1:
            raise ValidationError(f"jobs must be >= 1, got {self.jobs}")
        if self.eval_archs is not None:
            self.eval_archs = tuple(check_arch_id(a) for a in self.eval_archs)


@dataclass(frozen=True)
class LoocvRow:
    """One (held-out device, method, k) result.

    train_devices lists the devices whose samples built the training set;
    error holds the failure message when the method could not be evaluated.
    """
    held_out_device: str
    method: str
    k_adapt: int
    report: ErrorBoundReport = None
    train_devices: tuple = ()
    error: str = None

    def __post_init__(self):
        object.__setattr__(self, "train_devices", tuple(self.train_devices))


@dataclass
class LoocvReport:
    rows: list = field(default_factory=list)
    mean_rows: list = field(default_factory=list)

    def mean(self, method, k):
        for row in self.mean_rows:
            if row.method == method and row.k_adapt == k:
                return row.report
        raise KeyError((method, k))

    def held_out_devices(self):
        return list(dict.fromkeys(r.held_out_device for r in self.rows))


def _fold_seed(seed, device):
    return seed + device.seed


def _evaluate(method, k, fold):
    """Predicted latencies of one method for one fold and adaptation size."""
    d, skel, archs = fold["device"], fold["skel"], fold["eval_archs"]
    adaptation = fold["adaptation"]
    if method == "predictor":
        adapt_k = SampleSet(adaptation.samples[:k], adaptation.descriptors) if k else None
        T = build_training_set(fold["initial"], adapt_k)
        model, _ = train(init_model(fold["model_cfg"]), T)
        return predict_architectures(model, archs, sim_descriptor(d))
    if method == "lut":
        return lut_predict_many(build_lut(d, "sim", skel), archs, skel)
    if method == "layerwise":
        return lut_predict_many(measure_layerwise_table(d, "sim", skel), archs, skel)
    # FLOPs proxy: fit on the held-out device's adaptation samples, or on the
    # training pool when there are none
    fit = adaptation.samples[:k] if k else fold["initial"].samples
    scale = fit_flops_scale([s.arch for s in fit], [s.latency_ms for s in fit], skel)
    return np.array([flops_predict(scale, a, skel) for a in archs])


def _run_fold(fold):
    d = fold["device"]
    truths = sim_latencies(d, fold["eval_archs"], fold["skel"])
    rows = []
    for method in fold["methods"]:
        for k in fold["k_values"]:
            try:
                preds = _evaluate(method, k, fold)
                row = LoocvRow(d.device_id, method, k, error_bound_report(preds, truths),
                               fold["train_devices"])
            except (LatencyToolkitError, ArithmeticError, np.linalg.LinAlgError) as err:
                logger.warning("%s / %s / k=%d failed: %s", d.device_id, method, k, err)
                row = LoocvRow(d.device_id, method, k, None, fold["train_devices"], str(err))
            rows.append(row)
    logger.info("fold %s finished", d.device_id)
    return rows


def _mean_rows(rows, methods, k_values):
    means = []
    for method in methods:
        for k in k_values:
            done = [r.report for r in rows if r.method == method and r.k_adapt == k and r.report]
            if not done:
                means.append(LoocvRow(MEAN_ROW, method, k, None, (), "no successful folds"))
                continue
            accs = [sum(getattr(r, name) for r in done) / len(done)
                    for name in ("acc_1pct", "acc_5pct", "acc_10pct")]
            means.append(LoocvRow(MEAN_ROW, method, k,
                                  ErrorBoundReport(*accs, n_eval=sum(r.n_eval for r in done))))
    return means


def loocv(pool, config=None, model_cfg=None, skel=None):
    """Rotate every simulated device out of the training pool once.

    For each held-out device the initial set holds config.n_train samples
    (the same architectures) from every other device, the adaptation set
    holds the first k samples of one seeded adaptation sequence of the
    held-out device, and every method is scored against the noiseless
    ground truth of the held-out device.

    Args:
        pool (list of SimDevice): at least two devices with distinct ids
        config (LoocvConfig): run settings
        model_cfg (ModelConfig): regressor settings
        skel (NetworkSkeleton): macro skeleton

    Returns:
        LoocvReport whose rows are ordered by pool, method, k.
    """
    config = config or LoocvConfig()
    model_cfg = model_cfg or ModelConfig(seed=config.seed)
    skel = skel or NetworkSkeleton()
    pool = list(pool)
    if len(pool) < 2:
        raise DomainError(f"need at least 2 devices, got {len(pool)}")
    if not all(isinstance(d, SimDevice) for d in pool):
        raise DomainError("cross-validation runs on simulated devices")
    ids = [d.device_id for d in pool]
    if len(set(ids)) != len(ids):
        raise DomainError(f"duplicate device ids in {ids}")

    archs = select_training_architectures(config.n_train, config.seed)
    initial = collect_initial(pool, archs, "sim", skel, config.seed)
    eval_archs = list(config.eval_archs) if config.eval_archs is not None else list(range(NUM_ARCHITECTURES))
    k_max = max(config.k_values)

    folds = []
    for d in pool:
        train_devices = tuple(i for i in ids if i != d.device_id)
        fold_initial = SampleSet([s for s in initial.samples if s.device_id != d.device_id],
                                 {i: initial.descriptors[i] for i in train_devices})
        adaptation = (collect_adaptation(d, k_max, _fold_seed(config.seed, d), "sim", skel)
                      if k_max else SampleSet())
        folds.append({"device": d, "initial": fold_initial, "adaptation": adaptation,
                      "train_devices": train_devices, "eval_archs": eval_archs, "skel": skel,
                      "model_cfg": model_cfg, "methods": config.methods,
                      "k_values": config.k_values})

    if config.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.jobs) as executor:
            results = list(executor.map(_run_fold, folds))
    else:
        results = [_run_fold(fold) for fold in folds]
    rows = [row for fold_rows in results for row in fold_rows]
    return LoocvReport(rows, _mean_rows(rows, config.methods, config.k_values))


# ===== descriptor distances =====

def descriptor_distance_matrix(descriptors, normalized=True, include_latency=True, model=None):
    """Pairwise Euclidean distances between device descriptors.

    Args:
        descriptors (list): HardwareDescriptor objects or flat vectors
        normalized (bool): log1p + z-score the features first; the z-score
            statistics come from `model` when given, else from the descriptors
        include_latency (bool): append the 15 operator latencies
        model (RegressionModel): use its feature normalization

    Returns:
        numpy.ndarray (n, n), symmetric with a zero diagonal.
    """
    vectors = []
    for d in descriptors:
        if model is not None:
            vectors.append(descriptor_features(model, d))
        elif isinstance(d, HardwareDescriptor):
            vectors.append(d.features(include_latency=include_latency))
        else:
            vectors.append(np.asarray(d, dtype=float).ravel())
    if len({v.size for v in vectors}) > 1:
        raise DomainError(f"descriptor sizes differ: {sorted({v.size for v in vectors})}")
    n = len(vectors)
    if n == 0:
        return np.zeros((0, 0))
    X = np.array(vectors, dtype=float)
    if normalized and model is None:
        X = np.log1p(X)
        std = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(std > 1e-12, std, 1.0)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = np.linalg.norm(X[i] - X[j])
    return dist


# ===== Pareto fronts =====

@dataclass(frozen=True)
class ParetoPoint:
    arch: int
    latency_ms: float
    accuracy: float

    def __post_init__(self):
        if not math.isfinite(self.latency_ms) or not 0 <= self.accuracy <= 1:
            raise DomainError(f"bad point {self}")


def pareto_front(points):
    """Points not dominated by any other, sorted by latency then arch id.

    P dominates Q when P is no slower and no less accurate, and strictly
    better in one of the two. Identical points never dominate each other.
    """
    ordered = sorted(points, key=lambda p: (p.latency_ms, -p.accuracy, p.arch))
    front = []
    best_before = -math.inf
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].latency_ms == ordered[i].latency_ms:
            j += 1
        group_best = ordered[i].accuracy
        if group_best > best_before:
            front.extend(p for p in ordered[i:j] if p.accuracy == group_best)
            best_before = group_best
        i = j
    return sorted(front, key=lambda p: (p.latency_ms, p.arch))


def pareto_agreement(predicted_front, true_front):
    """Share of the true front's architectures also on the predicted front."""
    true_ids = {p.arch for p in true_front}
    predicted_ids = {p.arch for p in predicted_front}
    if not true_ids:
        return 1.0 if not predicted_ids else 0.0
    return len(true_ids & predicted_ids) / len(true_ids)


def pareto_table(archs, true_latency, predicted_latency, accuracy):
    """Per-architecture table marking true-front and predicted-front membership.

    Both fronts use the same accuracies; the predicted front ranks by
    predicted latency. The latency column holds the true latency.
    """
    archs = [check_arch_id(a) for a in archs]
    if not len(archs) == len(true_latency) == len(predicted_latency) == len(accuracy):
        raise DomainError("archs, latencies and accuracies must have equal lengths")
    true_front = pareto_front(ParetoPoint(a, float(t), float(acc))
                              for a, t, acc in zip(archs, true_latency, accuracy))
    pred_front = pareto_front(ParetoPoint(a, float(p), float(acc))
                              for a, p, acc in zip(archs, predicted_latency, accuracy))
    on_true = {p.arch for p in true_front}
    on_pred = {p.arch for p in pred_front}
    return pd.DataFrame({
        "arch_id": archs,
        "latency_ms": np.asarray(true_latency, dtype=float),
        "accuracy": np.asarray(accuracy, dtype=float),
        "on_true_front": [a in on_true for a in archs],
        "on_predicted_front": [a in on_pred for a in archs],
    }, columns=PARETO_COLUMNS)


def emit_pareto(table, path):
    table.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


# ===== report files =====

def _report_frame(report):
    records = []
    for row in report.rows + report.mean_rows:
        r = row.report
        records.append((row.held_out_device, row.method, row.k_adapt,
                        r.acc_1pct if r else np.nan, r.acc_5pct if r else np.nan,
                        r.acc_10pct if r else np.nan, r.n_eval if r else 0))
    return pd.DataFrame(records, columns=REPORT_COLUMNS)


def _row_to_dict(row):
    data = asdict(row)
    data["train_devices"] = list(row.train_devices)
    return data


def _row_from_dict(data):
    report = data.get("report")
    return LoocvRow(held_out_device=data["held_out_device"], method=data["method"],
                    k_adapt=int(data["k_adapt"]),
                    report=ErrorBoundReport(**report) if report else None,
                    train_devices=data.get("train_devices", ()), error=data.get("error"))


def emit_report(report, fmt, path):
    """Write a LoocvReport as "json" (lossless) or "csv" (one line per row, mean rows last)."""
    if fmt == "json":
        write_json({"rows": [_row_to_dict(r) for r in report.rows],
                    "mean": [_row_to_dict(r) for r in report.mean_rows]}, path)
    elif fmt == "csv":
        _report_frame(report).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    else:
        raise UsageError(f"unknown report format {fmt!r}; expected 'csv' or 'json'")


def load_report(path, fmt=None):
    """Read a report written by emit_report; fmt defaults to the file extension.

    CSV reports carry no provenance, so their rows have empty train_devices.
    """
    fmt = fmt or os.path.splitext(path)[1].lstrip(".").lower()
    if fmt == "json":
        data = read_json(path)
        try:
            return LoocvReport([_row_from_dict(r) for r in data["rows"]],
                               [_row_from_dict(r) for r in data["mean"]])
        except (KeyError, TypeError) as err:
            raise ParseError(f"{path}: malformed report: {err}")
    if fmt != "csv":
        raise UsageError(f"unknown report format {fmt!r}; expected 'csv' or 'json'")

    frame = pd.read_csv(path, dtype={"held_out_device": str, "method": str},
                        float_precision="round_trip", encoding="utf-8")
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}", line=1)
    report = LoocvReport()
    for rec in frame.itertuples(index=False):
        result = None
        if not pd.isna(rec.acc_1pct):
            result = ErrorBoundReport(float(rec.acc_1pct), float(rec.acc_5pct),
                                      float(rec.acc_10pct), int(rec.n_eval))
        row = LoocvRow(rec.held_out_device, rec.method, int(rec.k_adapt), result)
        (report.mean_rows if rec.held_out_device == MEAN_ROW else report.rows).append(row)
    return report
