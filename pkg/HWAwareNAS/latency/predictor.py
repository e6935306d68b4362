"""Dual-stream latency regressor f(a, S) -> latency, written directly in numpy.

Stream one maps the 30-value architecture encoding through two ReLU layers
to a 32-value projection. Stream two concatenates that projection with the
normalized hardware descriptor and maps it through two more ReLU layers to
a scalar in transformed-target space.

With the default calibrated target the network regresses log latency
relative to a per-device base, overhead + scale * (sum of the descriptor's
operator latencies over the architecture's edges and stages). Overhead and
scale are least-squares fits on each device's training samples.
"""
import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParseError, ShapeError, TrainingDivergenceError, ValidationError
from .io_utils import read_json, write_json
from .hwcounters import DESCRIPTOR_SIZE, FEATURE_SIZE, HardwareDescriptor
from .search_space import NUM_EDGES, NUM_OP_KINDS, STAGE_WIDTHS, encode

__all__ = [
    "ModelConfig", "RegressionModel", "TrainReport", "ARCH_INPUT_DIM", "TARGET_TRANSFORMS",
    "init_model", "descriptor_features", "encodings_matrix", "lut_sums", "base_latency",
    "transform_targets", "inverse_transform", "forward", "forward_transformed",
    "predict_batch", "predict_architectures", "loss_and_gradients", "weighted_mae",
    "learning_rate_at", "train", "gradient_check", "save_model", "load_model",
]

logger = logging.getLogger(__name__)

ARCH_INPUT_DIM = NUM_EDGES * NUM_OP_KINDS
PROJECTION_DIM = 32
TARGET_TRANSFORMS = ("calibrated", "log", "raw")
_SHUFFLE_SALT = 1
_CHECK_SALT = 2
_MIN_BASE_MS = 1e-6


@dataclass
class ModelConfig:
    """Shape and training hyperparameters of the regressor.

    target_transform=None picks "calibrated" when the descriptor carries
    operator latencies and "log" for the counters-only ablation. The step
    size follows a cosine decay from learning_rate to
    final_lr_fraction * learning_rate over all updates of a run.
    """
    arch_hidden: tuple = (64, 64)
    arch_projection_dim: int = PROJECTION_DIM
    joint_hidden: tuple = (128, 128)
    activation: str = "relu"
    descriptor_dim: int = FEATURE_SIZE
    learning_rate: float = 1e-3
    final_lr_fraction: float = 0.01
    epochs: int = 400
    batch_size: int = 128
    seed: int = 0
    target_transform: str = None
    loss_epsilon: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        self.arch_hidden = tuple(int(h) for h in self.arch_hidden)
        self.joint_hidden = tuple(int(h) for h in self.joint_hidden)
        if self.arch_projection_dim != PROJECTION_DIM:
            raise ValidationError(
                f"arch_projection_dim is fixed at {PROJECTION_DIM}, got {self.arch_projection_dim}")
        if min(self.arch_hidden + self.joint_hidden, default=1) < 1:
            raise ValidationError("hidden sizes must be >= 1")
        if self.activation != "relu":
            raise ValidationError(f"unsupported activation {self.activation!r}")
        if self.descriptor_dim not in (DESCRIPTOR_SIZE, FEATURE_SIZE):
            raise ValidationError(
                f"descriptor_dim must be {FEATURE_SIZE} or {DESCRIPTOR_SIZE}, got {self.descriptor_dim}")
        if self.target_transform is None:
            self.target_transform = "calibrated" if self.include_latency else "log"
        if self.target_transform not in TARGET_TRANSFORMS:
            raise ValidationError(
                f"target_transform must be one of {TARGET_TRANSFORMS}, got {self.target_transform!r}")
        if self.target_transform == "calibrated" and not self.include_latency:
            raise ValidationError("the calibrated target needs the operator latencies of the descriptor")
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("learning_rate must be > 0, epochs >= 0 and batch_size >= 1")
        if not 0 < self.final_lr_fraction <= 1:
            raise ValidationError(f"final_lr_fraction must be in (0, 1], got {self.final_lr_fraction}")

    @property
    def include_latency(self):
        return self.descriptor_dim == FEATURE_SIZE

    def arch_layers(self):
        dims = (ARCH_INPUT_DIM,) + self.arch_hidden + (self.arch_projection_dim,)
        return list(zip(dims[:-1], dims[1:]))

    def joint_layers(self):
        dims = (self.arch_projection_dim + self.descriptor_dim,) + self.joint_hidden + (1,)
        return list(zip(dims[:-1], dims[1:]))


@dataclass(eq=False)
class RegressionModel:
    """Parameters of both streams plus feature and target normalization.

    params maps "arch.<i>.W", "arch.<i>.b", "joint.<i>.W" and "joint.<i>.b"
    to arrays; W has shape (fan_in, fan_out). Targets are transformed as
    (g(y) - target_mean) / target_std with g = log, identity, or log(y / base)
    for the calibrated kind.

    calibration maps a device id to its (overhead_ms, scale) pair. Devices
    without an entry use overhead_ratio * (summed operator latencies) and
    fallback_scale.
    """
    config: ModelConfig
    params: dict
    desc_mean: np.ndarray
    desc_std: np.ndarray
    target_kind: str = "log"
    target_mean: float = 0.0
    target_std: float = 1.0
    calibration: dict = field(default_factory=dict)
    overhead_ratio: float = 0.0
    fallback_scale: float = 1.0

    def copy(self):
        return copy.deepcopy(self)

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def layer_names(self, stream):
        n = len(self.config.arch_layers() if stream == "arch" else self.config.joint_layers())
        return [f"{stream}.{i}" for i in range(n)]


@dataclass
class TrainReport:
    """losses[0] is the full-set loss before any update; losses[e] is the
    weighted mean of the batch losses seen during epoch e. final_loss is the
    full-set weighted MAE of the returned model."""
    losses: list = field(default_factory=list)
    final_loss: float = float("nan")
    epochs: int = 0


# ===== construction =====

_TARGET_KINDS = {"calibrated": "calibrated", "log": "log", "raw": "identity"}


def init_model(cfg=None):
    """Fresh model: He-uniform weights seeded by cfg.seed, zero biases."""
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for stream, layers in (("arch", cfg.arch_layers()), ("joint", cfg.joint_layers())):
        for i, (fan_in, fan_out) in enumerate(layers):
            limit = math.sqrt(6.0 / fan_in)
            params[f"{stream}.{i}.W"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            params[f"{stream}.{i}.b"] = np.zeros(fan_out)
    return RegressionModel(config=cfg, params=params,
                           desc_mean=np.zeros(cfg.descriptor_dim),
                           desc_std=np.ones(cfg.descriptor_dim),
                           target_kind=_TARGET_KINDS[cfg.target_transform])


# ===== features and targets =====

def _raw_descriptor(m, S):
    if isinstance(S, HardwareDescriptor):
        raw = S.features(include_latency=m.config.include_latency)
    else:
        raw = np.asarray(S, dtype=float).ravel()
    if raw.size != m.config.descriptor_dim:
        raise ShapeError(f"descriptor has {raw.size} values, model expects {m.config.descriptor_dim}")
    return raw


def descriptor_features(m, S):
    """log1p then z-score of a descriptor, using the model's statistics."""
    return (np.log1p(_raw_descriptor(m, S)) - m.desc_mean) / m.desc_std


def _encoding_row(a):
    a = encode(a) if isinstance(a, (int, np.integer)) else np.asarray(a)
    if a.size != ARCH_INPUT_DIM:
        raise ShapeError(f"architecture encoding has {a.size} values, expected {ARCH_INPUT_DIM}")
    return a.astype(float).ravel()


def encodings_matrix(archs):
    """Stack architecture ids or encodings into an (n, 30) float matrix."""
    return np.array([_encoding_row(a) for a in archs]).reshape(-1, ARCH_INPUT_DIM)


def lut_sums(A, op_latency_ms):
    """Operator latencies summed over edges and stages, one value per row of A.

    Args:
        A (numpy.ndarray): (n, 30) one-hot encodings
        op_latency_ms (numpy.ndarray): 15 operator latencies, kind-major

    Returns:
        numpy.ndarray of shape (n,)
    """
    ops = np.asarray(A).reshape(-1, NUM_EDGES, NUM_OP_KINDS).argmax(axis=2)
    latency = np.asarray(op_latency_ms, dtype=float)
    n_widths = len(STAGE_WIDTHS)
    return sum(latency[ops * n_widths + s].sum(axis=1) for s in range(n_widths))


def _descriptor_id(S):
    return S.device_id if isinstance(S, HardwareDescriptor) else None


def _calibration_for(m, device_id, op_latency_ms):
    if device_id in m.calibration:
        return m.calibration[device_id]
    return m.overhead_ratio * float(np.sum(op_latency_ms)), m.fallback_scale


def base_latency(m, A, S):
    """Calibrated base latency (ms) of each encoding row of A on descriptor S.

    Ones for the log and raw target kinds.
    """
    A = np.asarray(A).reshape(-1, ARCH_INPUT_DIM)
    if m.target_kind != "calibrated":
        return np.ones(len(A))
    latency = _raw_descriptor(m, S)[DESCRIPTOR_SIZE:]
    overhead, scale = _calibration_for(m, _descriptor_id(S), latency)
    return np.maximum(overhead + scale * lut_sums(A, latency), _MIN_BASE_MS)


def transform_targets(m, latency_ms, base_ms=None):
    """Latencies to model space; base_ms only matters for the calibrated kind."""
    y = np.asarray(latency_ms, dtype=float)
    if m.target_kind == "identity":
        g = y
    elif m.target_kind == "calibrated":
        g = np.log(y) - np.log(np.ones_like(y) if base_ms is None else np.asarray(base_ms, dtype=float))
    else:
        g = np.log(y)
    return (g - m.target_mean) / m.target_std


def inverse_transform(m, t, base_ms=None):
    g = np.asarray(t, dtype=float) * m.target_std + m.target_mean
    if m.target_kind == "identity":
        return g
    y = np.exp(g)
    if m.target_kind == "calibrated" and base_ms is not None:
        y = y * np.asarray(base_ms, dtype=float)
    return y


def _fit_device(sums, latencies):
    """Least-squares (overhead_ms, scale) of latency ~ overhead + scale * sum.

    The overhead is held between 5% and 95% of the fastest sample; with one
    sample or a constant sum it starts from half the fastest sample.
    """
    fastest = float(latencies.min())
    overhead = 0.5 * fastest
    if len(latencies) >= 2 and np.ptp(sums) > 0:
        _, overhead = np.polyfit(sums, latencies, 1)
    overhead = float(np.clip(overhead, 0.05 * fastest, 0.95 * fastest))
    positive = sums > 0
    scale = 0.0
    if positive.any():
        scale = float(((latencies - overhead)[positive] * sums[positive]).sum() / (sums[positive] ** 2).sum())
    return overhead, max(scale, 0.0)


def _fit_calibration(m, T):
    m.calibration, m.overhead_ratio, m.fallback_scale = {}, 0.0, 1.0
    if m.target_kind != "calibrated":
        return
    ratios, scales = [], []
    for device_id in T.device_ids():
        samples = [s for s in T.samples if s.device_id == device_id]
        latency = _raw_descriptor(m, T.descriptors[device_id])[DESCRIPTOR_SIZE:]
        sums = lut_sums(encodings_matrix(s.arch for s in samples), latency)
        overhead, scale = _fit_device(sums, np.array([s.latency_ms for s in samples]))
        m.calibration[device_id] = (overhead, scale)
        total = float(latency.sum())
        if total > 0:
            ratios.append(overhead / total)
        scales.append(scale)
        logger.debug("%s: overhead %.4f ms, scale %.4f", device_id, overhead, scale)
    m.overhead_ratio = float(np.median(ratios)) if ratios else 0.0
    m.fallback_scale = float(np.median(scales))


def _fit_normalization(m, T):
    feats = np.array([np.log1p(_raw_descriptor(m, d)) for d in T.descriptors.values()
                      if d.device_id in set(T.device_ids())])
    m.desc_mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    m.desc_std = np.where(std > 1e-12, std, 1.0)
    _fit_calibration(m, T)
    m.target_mean, m.target_std = 0.0, 1.0
    g = transform_targets(m, [s.latency_ms for s in T.samples], _sample_bases(m, T))
    m.target_mean = float(g.mean())
    spread = float(g.std())
    m.target_std = spread if spread > 1e-12 else 1.0


def _sample_bases(m, T):
    A = encodings_matrix(s.arch for s in T.samples)
    bases = np.ones(len(T.samples))
    for device_id in T.device_ids():
        rows = np.array([s.device_id == device_id for s in T.samples])
        bases[rows] = base_latency(m, A[rows], T.descriptors[device_id])
    return bases


# ===== forward / backward =====

def _forward(m, A, Z):
    """Batched forward in transformed space; returns (outputs, cache)."""
    p = m.params
    cache = {"arch": [], "joint": []}
    h = A
    names = m.layer_names("arch")
    for i, name in enumerate(names):
        z = h @ p[name + ".W"] + p[name + ".b"]
        cache["arch"].append((h, z))
        h = np.maximum(z, 0.0) if i + 1 < len(names) else z
    h = np.concatenate([h, Z], axis=1)
    names = m.layer_names("joint")
    for i, name in enumerate(names):
        z = h @ p[name + ".W"] + p[name + ".b"]
        cache["joint"].append((h, z))
        h = np.maximum(z, 0.0) if i + 1 < len(names) else z
    return h[:, 0], cache


def _backward(m, cache, dout):
    p = m.params
    grads = {}
    delta = dout[:, None]
    names = m.layer_names("joint")
    for i in reversed(range(len(names))):
        h, z = cache["joint"][i]
        if i + 1 < len(names):
            delta = delta * (z > 0)
        grads[names[i] + ".W"] = h.T @ delta
        grads[names[i] + ".b"] = delta.sum(axis=0)
        delta = delta @ p[names[i] + ".W"].T
    delta = delta[:, :m.config.arch_projection_dim]
    names = m.layer_names("arch")
    for i in reversed(range(len(names))):
        h, z = cache["arch"][i]
        if i + 1 < len(names):
            delta = delta * (z > 0)
        grads[names[i] + ".W"] = h.T @ delta
        grads[names[i] + ".b"] = delta.sum(axis=0)
        if i:
            delta = delta @ p[names[i] + ".W"].T
    return grads


def loss_and_gradients(m, A, Z, targets, weights=None):
    """Smoothed weighted MAE and its gradients, in transformed space.

    loss = sum_i w_i * sqrt(e_i^2 + eps^2) / sum_i w_i with e = f(a, S) - t.

    Args:
        m (RegressionModel): model
        A (numpy.ndarray): (n, 30) encodings
        Z (numpy.ndarray): (n, descriptor_dim) normalized descriptor features
        targets (numpy.ndarray): (n,) transformed targets
        weights (numpy.ndarray): (n,) positive sample weights, ones when None

    Returns:
        (loss, dict of gradients keyed like m.params)
    """
    weights = np.ones(len(targets)) if weights is None else np.asarray(weights, dtype=float)
    out, cache = _forward(m, A, Z)
    err = out - targets
    smooth = np.sqrt(err ** 2 + m.config.loss_epsilon ** 2)
    total = weights.sum()
    loss = float((weights * smooth).sum() / total)
    grads = _backward(m, cache, weights * err / smooth / total)
    return loss, grads


def weighted_mae(m, A, Z, targets, weights):
    out, _ = _forward(m, A, Z)
    return float((weights * np.abs(out - targets)).sum() / weights.sum())


def forward_transformed(m, a, S):
    """Model output for one pair before the inverse target transform."""
    out, _ = _forward(m, _encoding_row(a)[None, :], descriptor_features(m, S)[None, :])
    return float(out[0])


def forward(m, a, S):
    """Predicted latency (ms) of architecture a on the device described by S.

    Args:
        m (RegressionModel): trained or freshly initialized model
        a: architecture id or its (6, 5) encoding
        S: HardwareDescriptor or raw descriptor vector of descriptor_dim values
    """
    row = _encoding_row(a)[None, :]
    out, _ = _forward(m, row, descriptor_features(m, S)[None, :])
    return float(inverse_transform(m, out, base_latency(m, row, S))[0])


def predict_batch(m, pairs):
    """forward over (encoding, descriptor) pairs, order preserved."""
    pairs = list(pairs)
    if not pairs:
        return []
    A = encodings_matrix(a for a, _ in pairs)
    Z = np.array([descriptor_features(m, S) for _, S in pairs])
    bases = np.array([base_latency(m, A[i], S)[0] for i, (_, S) in enumerate(pairs)])
    out, _ = _forward(m, A, Z)
    return [float(v) for v in inverse_transform(m, out, bases)]


def predict_architectures(m, archs, S):
    """Predicted latency (ms) of many architecture ids on one device."""
    archs = list(archs)
    A = encodings_matrix(archs)
    Z = np.repeat(descriptor_features(m, S)[None, :], len(archs), axis=0)
    out, _ = _forward(m, A, Z)
    return inverse_transform(m, out, base_latency(m, A, S))


# ===== training =====

def _training_arrays(m, T):
    feats = {dev: descriptor_features(m, d) for dev, d in T.descriptors.items()}
    A = encodings_matrix(s.arch for s in T.samples)
    Z = np.array([feats[s.device_id] for s in T.samples])
    t = transform_targets(m, [s.latency_ms for s in T.samples], _sample_bases(m, T))
    w = np.array([s.weight for s in T.samples], dtype=float)
    return A, Z, t, w


def learning_rate_at(cfg, step, total_steps):
    """Cosine-decayed step size of update `step` (0-based) out of total_steps."""
    if total_steps <= 1:
        return cfg.learning_rate
    progress = step / (total_steps - 1)
    floor = cfg.final_lr_fraction
    return cfg.learning_rate * (floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * progress)))


def _flatten_params(model):
    """Move every parameter into one buffer; model.params become views of it."""
    names = list(model.params)
    flat = np.concatenate([model.params[k].ravel() for k in names])
    offset = 0
    for k in names:
        shape = model.params[k].shape
        size = model.params[k].size
        model.params[k] = flat[offset:offset + size].reshape(shape)
        offset += size
    return names, flat


def train(m, T, cfg=None):
    """Fit m to the weighted training set T with mini-batch Adam.

    Normalization statistics and device calibration are fitted on T first.
    The shuffle order is a fixed function of cfg.seed, so identical inputs
    give identical parameters.

    Args:
        m (RegressionModel): starting model (not modified)
        T (SampleSet): weighted samples, every device joinable to a descriptor
        cfg (ModelConfig): training hyperparameters, m.config when None

    Returns:
        (trained RegressionModel, TrainReport)

    Raises:
        TrainingDivergenceError: on a non-finite loss.
    """
    cfg = cfg or m.config
    if len(T) < 1:
        raise ValidationError("training set is empty")
    T.validate()
    model = m.copy()
    _fit_normalization(model, T)
    A, Z, t, w = _training_arrays(model, T)
    n = len(t)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    rng = np.random.default_rng([cfg.seed, _SHUFFLE_SALT])
    names, flat = _flatten_params(model)
    moments = np.zeros_like(flat)
    velocity = np.zeros_like(flat)
    step = 0
    report = TrainReport(losses=[weighted_mae(model, A, Z, t, w)])
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        seen_loss = seen_weight = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_gradients(model, A[idx], Z[idx], t[idx], w[idx])
            if not math.isfinite(loss):
                raise TrainingDivergenceError(epoch, loss)
            batch_weight = float(w[idx].sum())
            seen_loss += loss * batch_weight
            seen_weight += batch_weight
            g = np.concatenate([grads[k].ravel() for k in names])
            lr = learning_rate_at(cfg, step, total_steps)
            step += 1
            moments *= cfg.beta1
            moments += (1 - cfg.beta1) * g
            velocity *= cfg.beta2
            velocity += (1 - cfg.beta2) * g * g
            m_hat = moments / (1 - cfg.beta1 ** step)
            v_hat = velocity / (1 - cfg.beta2 ** step)
            flat -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
        report.losses.append(seen_loss / seen_weight)
        if epoch % 50 == 0:
            logger.debug("epoch %d: weighted loss %.6f, step size %.2e", epoch, report.losses[-1], lr)
    model.params = {k: model.params[k].copy() for k in names}
    report.final_loss = weighted_mae(model, A, Z, t, w) if cfg.epochs else report.losses[0]
    if not math.isfinite(report.final_loss):
        raise TrainingDivergenceError(cfg.epochs, report.final_loss)
    report.epochs = cfg.epochs
    logger.info("trained on %d samples for %d epochs, final weighted MAE %.5f",
                n, cfg.epochs, report.final_loss)
    return model, report


# ===== gradient check =====

def gradient_check(m, sample, step=1e-5, max_entries_per_block=20, seed=0):
    """Compare backprop gradients with central finite differences.

    Args:
        m (RegressionModel): model to check
        sample: (architecture id or encoding, descriptor, latency_ms)
        step (float): finite-difference step
        max_entries_per_block (int): entries checked per parameter array,
            chosen with a seeded generator; None checks every entry
        seed (int): seed of the entry choice

    Returns:
        max relative error |g - n| / max(|g| + |n|, 1e-5) over checked entries.
    """
    a, S, latency = sample
    A = _encoding_row(a)[None, :]
    Z = descriptor_features(m, S)[None, :]
    t = transform_targets(m, [latency], base_latency(m, A, S))
    _, grads = loss_and_gradients(m, A, Z, t)

    probe = m.copy()
    rng = np.random.default_rng([seed, _CHECK_SALT])
    worst = 0.0
    for name, param in probe.params.items():
        flat = param.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries_per_block is not None and flat.size > max_entries_per_block:
            entries = rng.choice(flat.size, size=max_entries_per_block, replace=False)
        analytic = grads[name].reshape(-1)
        for i in entries:
            saved = flat[i]
            flat[i] = saved + step
            plus, _ = loss_and_gradients(probe, A, Z, t)
            flat[i] = saved - step
            minus, _ = loss_and_gradients(probe, A, Z, t)
            flat[i] = saved
            numeric = (plus - minus) / (2 * step)
            rel = abs(analytic[i] - numeric) / max(abs(analytic[i]) + abs(numeric), 1e-5)
            worst = max(worst, rel)
    return worst


# ===== persistence =====

def save_model(m, path):
    data = {
        "config": asdict(m.config),
        "params": {k: v.tolist() for k, v in m.params.items()},
        "desc_mean": m.desc_mean.tolist(),
        "desc_std": m.desc_std.tolist(),
        "target_kind": m.target_kind,
        "target_mean": m.target_mean,
        "target_std": m.target_std,
        "calibration": {k: list(v) for k, v in m.calibration.items()},
        "overhead_ratio": m.overhead_ratio,
        "fallback_scale": m.fallback_scale,
    }
    write_json(data, path, indent=None)


def load_model(path):
    data = read_json(path)
    try:
        cfg = ModelConfig(**data["config"])
        model = RegressionModel(config=cfg,
                                params={k: np.array(v, dtype=float) for k, v in data["params"].items()},
                                desc_mean=np.array(data["desc_mean"], dtype=float),
                                desc_std=np.array(data["desc_std"], dtype=float),
                                target_kind=data["target_kind"],
                                target_mean=float(data["target_mean"]),
                                target_std=float(data["target_std"]),
                                calibration={k: (float(o), float(s))
                                             for k, (o, s) in data.get("calibration", {}).items()},
                                overhead_ratio=float(data.get("overhead_ratio", 0.0)),
                                fallback_scale=float(data.get("fallback_scale", 1.0)))
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"malformed model file: {err}")
    if model.target_kind != _TARGET_KINDS[cfg.target_transform]:
        raise ValidationError(f"model file: target kind {model.target_kind!r} "
                              f"does not match transform {cfg.target_transform!r}")
    expected = init_model(cfg).params
    for k, v in expected.items():
        if k not in model.params or model.params[k].shape != v.shape:
            raise ValidationError(f"model file: parameter {k} missing or misshapen")
    return model
