"""Command-line front end: the pipeline as composable subcommands.

Machine-readable JSON goes to stdout; human-readable progress and the
resolved configuration go to stderr. Exit codes: 0 success (for ``verify``
and ``certify``: positive decision), 3 negative decision, 64 usage error,
65 malformed input data, 70 unexpected internal failure.

Dataset directories produced by ``gen-data`` contain ``train/`` and
``test/`` splits; training consumes the train split, representative pools
come from the held-out test split.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .backend import backend_name
from .certify import (
    beta2_star_gaussian,
    beta2_star_uniform,
    certified_region,
    gaussian_condition,
    save_region,
    tau_certified,
    uniform_condition,
)
from .classifiers import load_model, save_model
from .conformal import (
    build_calibration_set,
    calibration_threshold,
    load_calibration,
    save_calibration,
    verify,
)
from .errors import CertDWError
from .harness import (
    ExperimentConfig,
    emit_report,
    perturbation_grid_sweep,
    resolve_threads,
    run_pipeline,
    save_grid,
)
from .numerics import SeededStream
from .smoothing import NoiseSpec
from .stats import select_class_representatives, stability, watermark_robustness
from .toytrain import (
    gen_toy_dataset,
    load_dataset,
    save_dataset,
    train_model,
)
from .watermark import (
    BADNETS_PATCH,
    BLENDED_NOISE,
    BLENDED_PATCH,
    load_trigger,
    make_badnets_trigger,
    make_blended_noise_trigger,
    make_blended_patch_trigger,
    poison_dataset,
    save_trigger,
    trigger_radius,
)

EX_OK = 0
EX_NEGATIVE = 3
EX_USAGE = 64
EX_DATAERR = 65
EX_SOFTWARE = 70

_TRIGGER_FLAG_TO_KIND = {
    "badnets": BADNETS_PATCH,
    "blended-patch": BLENDED_PATCH,
    "blended-noise": BLENDED_NOISE,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2))


def _shape(text: str) -> tuple:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("shape must be C,H,W")
    return tuple(parts)


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="certdw",
                     description="certified dataset ownership verification")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--shape", type=_shape, default=(3, 8, 8))
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("watermark", help="poison a dataset with a fresh trigger")
    p.add_argument("--data", required=True)
    p.add_argument("--trigger", required=True, choices=sorted(_TRIGGER_FLAG_TO_KIND))
    p.add_argument("--target", type=int, default=1)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=0.6)
    p.add_argument("--patch-size", type=int, default=3)
    p.add_argument("--blend-alpha", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a toy model on a dataset's train split")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=["logistic", "mlp"], default="mlp")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate",
                       help="build a calibration set from benign models")
    p.add_argument("--models", required=True,
                   help="glob over model JSON files")
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="conformal ownership decision")
    p.add_argument("--model", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--data", required=True,
                   help="dataset dir; the test split provides representatives")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--alpha0", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("certify", help="certification record and region CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dist", choices=["gaussian", "uniform"], default="gaussian")
    p.add_argument("--sigma", type=float, help="gaussian smoothing scale")
    p.add_argument("--bounds", type=_float_list,
                   help="uniform smoothing bounds e,h")
    p.add_argument("--alpha0", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region-out", help="CSV path for the certified region grid")
    p.add_argument("--r-max", type=float, default=1.5)
    p.add_argument("--grid-n", type=int, default=101)

    p = sub.add_parser("sweep", help="WSR over a noise x adversarial offset grid")
    p.add_argument("--model", required=True)
    p.add_argument("--trigger", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps-n", type=_float_list, required=True)
    p.add_argument("--eps-a", type=_float_list, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", help="JSON config; flags override file values")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)

    return parser


def _load_pool(data_dir):
    return load_dataset(Path(data_dir) / "test")


def _cmd_gen_data(args) -> int:
    stream = SeededStream(args.seed)
    train, test = gen_toy_dataset(args.classes, args.per_class, args.shape,
                                  args.noise_std, stream.child("data"))
    out = Path(args.out)
    save_dataset(out / "train", train)
    save_dataset(out / "test", test)
    _log(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    _emit({"out": str(out), "train_count": len(train), "test_count": len(test),
           "num_classes": train.num_classes})
    return EX_OK


def _cmd_watermark(args) -> int:
    stream = SeededStream(args.seed)
    train = load_dataset(Path(args.data) / "train")
    test = load_dataset(Path(args.data) / "test")
    kind = _TRIGGER_FLAG_TO_KIND[args.trigger]
    if kind == BADNETS_PATCH:
        trig = make_badnets_trigger(train.shape, args.target,
                                    stream.child("trigger"),
                                    patch_size=args.patch_size)
    elif kind == BLENDED_PATCH:
        trig = make_blended_patch_trigger(train.shape, args.target,
                                          stream.child("trigger"),
                                          patch_size=args.patch_size,
                                          blend_alpha=args.blend_alpha)
    else:
        trig = make_blended_noise_trigger(train.shape, args.target,
                                          stream.child("trigger"),
                                          l2_budget=args.l2)
    wm = poison_dataset(train, trig, args.rate, stream.child("poison"))
    out = Path(args.out)
    save_dataset(out / "train", wm.dataset)
    save_dataset(out / "test", test)
    trigger_path = out / "trigger.json"
    save_trigger(trigger_path, trig)
    _log(f"poisoned {len(wm.poisoned_indices)} of {len(train)} samples "
         f"({args.trigger} -> label {args.target})")
    _emit({"out": str(out), "trigger": str(trigger_path),
           "poisoned_count": int(len(wm.poisoned_indices)),
           "poisoned_indices": [int(i) for i in wm.poisoned_indices]})
    return EX_OK


def _cmd_train(args) -> int:
    train = load_dataset(Path(args.data) / "train")
    model = train_model(train, arch=args.arch, epochs=args.epochs, lr=args.lr,
                        batch=args.batch, stream=SeededStream(args.seed),
                        hidden=args.hidden, model_id=args.out)
    save_model(args.out, model)
    _log(f"trained {args.arch} on {len(train)} samples -> {args.out}")
    _emit({"out": args.out, "arch": args.arch, "train_count": len(train)})
    return EX_OK


def _cmd_calibrate(args) -> int:
    paths = sorted(glob.glob(args.models))
    models = [load_model(p) for p in paths]
    pool = _load_pool(args.data)
    spec = NoiseSpec.gaussian(args.sigma)
    calib = build_calibration_set(models, pool, spec, args.samples, args.kappa,
                                  SeededStream(args.seed).child("calib"))
    save_calibration(args.out, calib)
    _log(f"calibrated {calib.size} models (m={calib.num_outliers}) -> {args.out}")
    _emit({"out": args.out, "J": calib.size, "m": calib.num_outliers,
           "pp_values": calib.pp_values.tolist()})
    return EX_OK


def _audit_statistics(args, spec):
    """Shared verify/certify path: representatives, W, S, R."""
    model = load_model(args.model)
    trig = load_trigger(args.trigger)
    pool = _load_pool(args.data)
    stream = SeededStream(args.seed).child("audit")
    reps = select_class_representatives(model, pool, stream.child("reps"))
    w_val = watermark_robustness(model, reps, trig, spec, args.samples,
                                 stream.child("wr"))
    s_val = stability(model, reps, trig.target_label, spec, args.samples,
                      stream.child("stab"))
    flat = reps.samples.reshape((-1,) + pool.shape)
    r_val = trigger_radius(trig, flat, clip=True)
    return model, trig, reps, w_val, s_val, r_val


def _cmd_verify(args) -> int:
    spec = NoiseSpec.gaussian(args.sigma)
    calib = load_calibration(args.calib)
    _, _, _, w_val, s_val, _ = _audit_statistics(args, spec)
    decision = verify(calib, w_val, args.alpha0)
    _emit({
        "W": w_val,
        "S": s_val,
        "p": decision.p_value,
        "threshold": decision.threshold,
        "verified": decision.trained_on_protected,
    })
    _log(f"p={decision.p_value:.4f} vs 1-alpha0={1 - args.alpha0:.4f}: "
         + ("verified" if decision.trained_on_protected else "not verified"))
    return EX_OK if decision.trained_on_protected else EX_NEGATIVE


def _cmd_certify(args) -> int:
    if args.dist == "gaussian":
        if args.sigma is None:
            raise UsageError("--dist gaussian requires --sigma")
        spec = NoiseSpec.gaussian(args.sigma)
    else:
        if args.bounds is None or len(args.bounds) != 2:
            raise UsageError("--dist uniform requires --bounds e,h")
        if args.region_out:
            raise UsageError("--region-out is defined for gaussian smoothing only")
        spec = NoiseSpec.uniform(*args.bounds)
    calib = load_calibration(args.calib)
    threshold = calibration_threshold(calib, args.alpha0)
    model, trig, reps, w_val, s_val, r_val = _audit_statistics(args, spec)
    decision = verify(calib, w_val, args.alpha0)

    doc = {
        "W": w_val,
        "S": s_val,
        "R": r_val,
        "p": decision.p_value,
        "threshold": threshold,
        "tau_certified": tau_certified(w_val, s_val, threshold),
        "num_classes": model.num_classes,
    }
    if args.dist == "gaussian":
        certified = gaussian_condition(w_val, r_val, args.sigma, threshold)
        doc["certified"] = certified
        doc["beta2_star"] = beta2_star_gaussian(w_val, [r_val], args.sigma)
        if args.region_out:
            region = certified_region(args.sigma, threshold,
                                      (0.0, args.r_max), (0.0, 1.0), args.grid_n)
            save_region(region, args.region_out)
            doc["region"] = {"csv": args.region_out, "area": region.area}
    else:
        e, h = args.bounds
        certified = uniform_condition(w_val, r_val, e, h, model.num_classes,
                                      threshold)
        doc["certified"] = certified
        doc["beta2_star"] = beta2_star_uniform(w_val, [r_val], e, h)
    _emit(doc)
    _log("certified" if certified else "not certified")
    return EX_OK if certified else EX_NEGATIVE


def _cmd_sweep(args) -> int:
    model = load_model(args.model)
    trig = load_trigger(args.trigger)
    pool = _load_pool(args.data)
    spec = NoiseSpec.gaussian(args.sigma)
    grid = perturbation_grid_sweep(model, trig, pool, args.eps_n, args.eps_a,
                                   spec, SeededStream(args.seed).child("sweep"))
    save_grid(args.out, args.eps_n, args.eps_a, grid)
    _log(f"swept {grid.shape[0]}x{grid.shape[1]} grid -> {args.out}")
    _emit({"out": args.out, "eps_n": args.eps_n, "eps_a": args.eps_a,
           "wsr": [[float(v) for v in row] for row in grid]})
    return EX_OK


def _cmd_run(args) -> int:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        doc["master_seed"] = args.seed
    config = ExperimentConfig.from_dict(doc)
    _log("resolved config: " + json.dumps(config.to_dict(), sort_keys=True))
    _log(f"kernel backend: {backend_name()}, "
         f"threads: {resolve_threads(args.threads)}")
    report = run_pipeline(config, threads=args.threads)
    written = emit_report(report, args.out)
    for level in report.noise_levels:
        _log(f"sigma={level.sigma}: " + json.dumps(level.aggregates))
    _emit({"out": args.out, "files": [str(p) for p in written],
           "aggregates": {repr(l.sigma): l.aggregates
                          for l in report.noise_levels}})
    return EX_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "watermark": _cmd_watermark,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "verify": _cmd_verify,
    "certify": _cmd_certify,
    "sweep": _cmd_sweep,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        resolved = {k: v for k, v in vars(args).items() if k != "command"}
        _log(f"{args.command}: resolved options "
             + json.dumps(resolved, sort_keys=True, default=str))
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EX_USAGE
    except CertDWError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EX_DATAERR
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EX_DATAERR
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EX_SOFTWARE


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
