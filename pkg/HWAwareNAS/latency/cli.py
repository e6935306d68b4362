"""hwaware-latency: command-line pipelines over the latency toolkit.

    hwaware-latency simgen --out pool.json
    hwaware-latency collect --devices sim:1..7 --n 900 --out samples.csv
    hwaware-latency adapt --initial samples.csv --device sim:8 --k 3 --out model.json
    hwaware-latency loocv --k 0,3,10 --format csv --out report.csv

Exit codes: 0 success, 1 internal error, 2 environment or measurement
error, 3 validation error.
"""
import argparse
import logging
import sys

import numpy as np
import pandas as pd

from .baselines import build_lut, save_lut
from .dataset import (HostDevice, build_training_set, collect_adaptation, collect_initial,
                      device_descriptor, load_samples, save_samples,
                      select_training_architectures)
from .devicesim import (SimConfig, SimDevice, accuracy_table, default_pool, load_device_pool,
                        make_device, save_device_pool, sim_latencies)
from .errors import (DomainError, ParseError, TrainingDivergenceError, UnsupportedError,
                     UsageError, ValidationError)
from .eval import (METHODS, LoocvConfig, ParetoPoint, descriptor_distance_matrix, emit_pareto,
                   emit_report, loocv, pareto_agreement, pareto_table)
from .hwcounters import load_descriptor, save_descriptor
from .kernels import pin_process_from_env
from .predictor import (TARGET_TRANSFORMS, ModelConfig, init_model, load_model, predict_architectures,
                        save_model, train)
from .search_space import NUM_ARCHITECTURES, load_architectures

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_ENVIRONMENT = 2
EXIT_VALIDATION = 3

# commands that time kernels or read counters on this host
_MEASURING = {"characterize", "collect", "adapt"}


# ===== argument helpers =====

def parse_seeds(text):
    """'1..8' or '1,2,5' (or a mix like '1..3,7') to a list of ints."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if ".." in part:
                low, high = part.split("..", 1)
                seeds.extend(range(int(low), int(high) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise UsageError(f"bad seed list {text!r}")
    if not seeds:
        raise UsageError(f"empty seed list {text!r}")
    return seeds


def parse_devices(spec, pool=None):
    """Resolve a device spec ("host", "sim:1..7", "sim:1,2") to (devices, source).

    Simulated seeds are looked up in `pool` (the default pool when None) and
    generated with make_device when the pool lacks them.
    """
    spec = spec.strip()
    if spec == "host":
        return [HostDevice()], "host"
    if not spec.startswith("sim:"):
        raise UsageError(f"device spec must be 'host' or 'sim:<seeds>', got {spec!r}")
    known = {d.seed: d for d in (pool if pool is not None else default_pool())}
    return [known.get(s) or make_device(s) for s in parse_seeds(spec[4:])], "sim"


def _pool(args):
    return load_device_pool(args.pool) if getattr(args, "pool", None) else None


def _archs(args, default):
    return load_architectures(args.archs) if getattr(args, "archs", None) else default


def _model_config(args):
    return ModelConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                       descriptor_dim=args.descriptor_dim, target_transform=args.target,
                       seed=args.seed)


def _single_device(spec, pool):
    devices, source = parse_devices(spec, pool)
    if len(devices) != 1:
        raise UsageError(f"expected one device, got {len(devices)} from {spec!r}")
    return devices[0], source


# ===== commands =====

def cmd_simgen(args):
    config = SimConfig(noise_cv=args.noise_cv)
    pool = default_pool(parse_seeds(args.seeds), config)
    save_device_pool(pool, args.out or "pool.json")
    logger.info("wrote %d simulated devices", len(pool))


def cmd_characterize(args):
    out = args.out or "descriptor.json"
    if args.sim_device is not None:
        device, _ = _single_device(f"sim:{args.sim_device}", _pool(args))
        save_descriptor(device_descriptor(device, "sim"), out)
        return
    host = HostDevice(device_id=args.device_id, counter_iterations=args.iterations)
    try:
        desc = device_descriptor(host, "host")
    except UnsupportedError as err:
        raise UnsupportedError(f"{err.reason}; rerun with --sim-device SEED for a simulated descriptor")
    save_descriptor(desc, out)


def cmd_collect(args):
    devices, source = parse_devices(args.devices, _pool(args))
    if args.source and args.source != source:
        raise UsageError(f"--source {args.source} does not match devices {args.devices!r}")
    archs = _archs(args, None) or select_training_architectures(args.n, args.seed)
    samples = collect_initial(devices, archs, source, seed=args.seed)
    save_samples(samples, args.out or "samples.csv")
    logger.info("wrote %d samples", len(samples))


def cmd_train(args):
    samples = load_samples(args.samples)
    if args.reweight:
        samples = build_training_set(samples)
    cfg = _model_config(args)
    model, report = train(init_model(cfg), samples)
    save_model(model, args.out or "model.json")
    logger.info("final weighted MAE %.5f", report.final_loss)


def cmd_adapt(args):
    pool = _pool(args)
    initial = load_samples(args.initial)
    device, source = _single_device(args.device, pool)
    if device.device_id in initial.device_ids():
        logger.warning("%s also appears in the initial set", device.device_id)
    adaptation = collect_adaptation(device, args.k, seed=args.seed, source=source)
    if args.samples_out:
        save_samples(adaptation, args.samples_out)
    cfg = _model_config(args)
    model, report = train(init_model(cfg), build_training_set(initial, adaptation))
    save_model(model, args.out or "model.json")
    logger.info("adapted to %s with %d samples, final weighted MAE %.5f",
                device.device_id, args.k, report.final_loss)


def _target_descriptor(args):
    if args.descriptor:
        return load_descriptor(args.descriptor)
    if not args.device:
        raise UsageError("pass --descriptor or --device")
    device, source = _single_device(args.device, _pool(args))
    return device_descriptor(device, source)


def cmd_predict(args):
    model = load_model(args.model)
    archs = _archs(args, list(range(NUM_ARCHITECTURES)))
    preds = predict_architectures(model, archs, _target_descriptor(args))
    frame = pd.DataFrame({"arch_id": archs, "latency_ms": preds})
    frame.to_csv(args.out or "predictions.csv", index=False, float_format="%.17g")


def cmd_loocv(args):
    if args.format not in ("csv", "json"):
        raise UsageError(f"unknown report format {args.format!r}; expected 'csv' or 'json'")
    pool = _pool(args)
    if args.devices:
        devices, source = parse_devices(args.devices, pool)
        if source != "sim":
            raise UsageError("cross-validation needs simulated devices")
    else:
        devices = pool if pool is not None else default_pool()
    config = LoocvConfig(n_train=args.n, k_values=[int(k) for k in parse_seeds(args.k)],
                         methods=args.methods.split(","), seed=args.seed,
                         eval_archs=_archs(args, None), jobs=args.jobs)
    report = loocv(devices, config, _model_config(args))
    emit_report(report, args.format, args.out or f"report.{args.format}")


def cmd_pareto(args):
    device, _ = _single_device(args.device, _pool(args))
    if not isinstance(device, SimDevice):
        raise UsageError("Pareto tables need a simulated device for the true latency")
    model = load_model(args.model)
    archs = _archs(args, list(range(NUM_ARCHITECTURES)))
    truth = sim_latencies(device, archs)
    predicted = predict_architectures(model, archs, device_descriptor(device, "sim"))
    accuracy = accuracy_table()[np.asarray(archs, dtype=int)]
    table = pareto_table(archs, truth, predicted, accuracy)
    emit_pareto(table, args.out or "pareto.csv")
    true_front = [ParetoPoint(r.arch_id, r.latency_ms, r.accuracy)
                  for r in table[table.on_true_front].itertuples()]
    pred_front = [ParetoPoint(r.arch_id, r.latency_ms, r.accuracy)
                  for r in table[table.on_predicted_front].itertuples()]
    logger.info("Pareto agreement %.4f (%d true-front architectures)",
                pareto_agreement(pred_front, true_front), len(true_front))


def cmd_distmap(args):
    if args.descriptors:
        descriptors = [load_descriptor(p) for p in args.descriptors]
    else:
        devices, source = parse_devices(args.devices or "sim:1..8", _pool(args))
        descriptors = [device_descriptor(d, source) for d in devices]
    dist = descriptor_distance_matrix(descriptors, normalized=not args.raw,
                                      include_latency=not args.no_latency)
    ids = [d.device_id for d in descriptors]
    frame = pd.DataFrame(dist, index=ids, columns=ids)
    frame.to_csv(args.out or "distances.csv", float_format="%.17g", index_label="device_id")


def cmd_lut(args):
    device, source = _single_device(args.device, _pool(args))
    save_lut(build_lut(device, source, include_overhead=not args.no_overhead),
             args.out or "lut.json")


# ===== parser =====

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed of every random choice")
    common.add_argument("--out", default=None, help="output file")
    common.add_argument("--format", default="csv", help="report format: csv or json")
    common.add_argument("--pool", default=None, help="device pool JSON written by simgen")
    common.add_argument("-v", "--verbose", action="count", default=0)

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, default=ModelConfig.epochs)
    training.add_argument("--lr", type=float, default=ModelConfig.learning_rate)
    training.add_argument("--batch-size", type=int, default=ModelConfig.batch_size)
    training.add_argument("--descriptor-dim", type=int, default=ModelConfig.descriptor_dim,
                          help="165 (counters + operator latencies) or 150 (counters only)")
    training.add_argument("--target", choices=list(TARGET_TRANSFORMS), default=None,
                          help="calibrated (default with operator latencies), log or raw")

    parser = argparse.ArgumentParser(prog="hwaware-latency", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simgen", parents=[common], help="write a simulated device pool")
    p.add_argument("--seeds", default="1..8")
    p.add_argument("--noise-cv", type=float, default=SimConfig.noise_cv)
    p.set_defaults(func=cmd_simgen)

    p = sub.add_parser("characterize", parents=[common], help="build a hardware descriptor")
    p.add_argument("--device-id", default="host")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--sim-device", type=int, default=None, help="seed of a simulated device")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("collect", parents=[common], help="measure an initial sample set")
    p.add_argument("--devices", required=True, help="'host', 'sim:1..7' or 'sim:1,2'")
    p.add_argument("--archs", default=None, help="file of architecture ids")
    p.add_argument("--n", type=int, default=900)
    p.add_argument("--source", choices=["sim", "host"], default=None)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", parents=[common, training], help="train on a sample CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--reweight", action="store_true",
                   help="replace the stored weights with 1/sqrt(n) before training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", parents=[common, training],
                       help="add k samples of a target device and train")
    p.add_argument("--initial", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--samples-out", default=None, help="also write the adaptation samples")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("predict", parents=[common], help="predict latencies on one device")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptor", default=None)
    p.add_argument("--device", default=None)
    p.add_argument("--archs", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("loocv", parents=[common, training], help="leave-one-device-out evaluation")
    p.add_argument("--devices", default=None)
    p.add_argument("--n", type=int, default=900)
    p.add_argument("--k", default="0,3,10")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--archs", default=None, help="evaluate on these ids instead of the whole space")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("pareto", parents=[common], help="true vs predicted Pareto fronts")
    p.add_argument("--model", required=True)
    p.add_argument("--device", required=True)
    p.add_argument("--archs", default=None)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("distmap", parents=[common], help="descriptor distance matrix")
    p.add_argument("--descriptors", nargs="+", default=None)
    p.add_argument("--devices", default=None)
    p.add_argument("--raw", action="store_true", help="skip log1p + z-score normalization")
    p.add_argument("--no-latency", action="store_true", help="counters only")
    p.set_defaults(func=cmd_distmap)

    p = sub.add_parser("lut", parents=[common], help="build a latency look-up table")
    p.add_argument("--device", required=True)
    p.add_argument("--no-overhead", action="store_true")
    p.set_defaults(func=cmd_lut)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command in _MEASURING:
            pin_process_from_env()
        args.func(args)
    except UnsupportedError as err:
        logger.error("%s", err)
        return EXIT_ENVIRONMENT
    except (DomainError, ParseError, ValidationError, UsageError, TrainingDivergenceError) as err:
        logger.error("%s", err)
        return EXIT_VALIDATION
    except OSError as err:
        logger.error("%s", err)
        return EXIT_ENVIRONMENT
    except Exception:
        logger.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
