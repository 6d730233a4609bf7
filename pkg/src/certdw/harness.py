"""Experiment orchestration at toy scale.

``run_pipeline`` reproduces the protocol shape end to end: train benign,
watermarked and independent model populations on class-blob data, build a
calibration set of benign principal probabilities per noise level, then
audit every suspicious model (W, S, R, conformal p-value, certification
flags) and aggregate VSR / FPR / WCA / BA / WSR.

Every stochastic choice descends from one master seed through named
substreams, so reports are byte-identical across runs and across worker
counts (``CERTDW_THREADS``). Per-trial failures are isolated: a trial that
cannot be evaluated is recorded with its error and excluded from
aggregates rather than aborting the run.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .certify import (
    beta2_star_gaussian,
    certified_region,
    gaussian_condition,
    generic_condition,
    save_region,
    tau_certified,
    wca,
)
from .classifiers import Classifier, MLPClassifier
from .conformal import (
    CalibrationSet,
    build_calibration_set,
    calibration_threshold,
    calibration_to_dict,
    verify,
)
from .errors import CertDWError, DomainError, UnsupportedOperationError
from .numerics import SeededStream
from .smoothing import NoiseSpec, sample_noise
from .stats import select_class_representatives, stability, watermark_robustness
from .toytrain import (
    LabeledDataset,
    evaluate_ba,
    evaluate_wsr,
    gen_toy_dataset,
    train_model,
)
from .watermark import (
    BADNETS_PATCH,
    BLENDED_NOISE,
    BLENDED_PATCH,
    TriggerSpec,
    apply_trigger,
    make_badnets_trigger,
    make_blended_noise_trigger,
    make_blended_patch_trigger,
    poison_dataset,
    trigger_residual_norms,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

ROLE_BENIGN = "benign"
ROLE_WATERMARKED = "watermarked"
ROLE_INDEPENDENT = "independent"


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one pipeline run; serializable to/from JSON."""

    master_seed: int = 0
    num_benign: int = 20
    num_watermarked: int = 10
    num_independent: int = 10
    noise_levels: tuple = (1.5,)
    samples: int = 1024          # Monte Carlo draws per prediction distribution
    kappa: float = 0.2
    alpha0: float = 0.05
    watermark_rate: float = 0.1
    trigger_kind: str = BLENDED_NOISE
    target_label: int = 1
    l2_budget: float = 0.8
    patch_size: int = 3
    blend_alpha: float = 0.2
    classes: int = 4
    per_class: int = 100
    shape: tuple = (3, 8, 8)
    data_noise_std: float = 0.05
    arch: str = "mlp"
    hidden: int = 32
    epochs: int = 100
    lr: float = 0.1
    batch: int = 32
    samples_per_class: int = 1
    region_r_max: float = 1.5
    region_grid_n: int = 61

    def __post_init__(self):
        object.__setattr__(self, "noise_levels",
                           tuple(float(s) for s in self.noise_levels))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.num_benign < 2:
            raise DomainError("need at least 2 benign models for calibration")
        if self.num_watermarked < 0 or self.num_independent < 0:
            raise DomainError("model counts must be >= 0")
        if not self.noise_levels:
            raise DomainError("need at least one noise level")
        if not 0.0 <= self.kappa < 1.0:
            raise DomainError(f"kappa must lie in [0, 1), got {self.kappa}")
        if not 0.0 < self.alpha0 < 1.0:
            raise DomainError(f"alpha0 must lie in (0, 1), got {self.alpha0}")
        if not 0 <= self.target_label < self.classes:
            raise DomainError("target label out of range")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["noise_levels"] = list(self.noise_levels)
        doc["shape"] = list(self.shape)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class ModelRecord:
    model_id: str
    role: str
    ba: float
    wsr: float | None = None
    trigger_id: str | None = None


@dataclass(frozen=True)
class TrialRecord:
    """One suspicious-model audit at one noise level.

    Trigger-dependent fields (W, R, p, verified, certification flags) are
    None for independent models audited without a trigger; ``error`` is set
    (and the statistics are None) when the trial could not be evaluated.

    Two certification routes are recorded side by side and genuinely
    differ for K > 1 representatives: ``gaussian_certified`` uses the
    single worst-case radius R, while ``beta2_star``/``generic_certified``
    use the joint root-sum-square of the per-sample residuals.
    """

    trial_id: str
    sigma: float
    model_id: str
    role: str
    threshold: float
    trigger_id: str | None = None
    W: float | None = None
    S: float | None = None
    R: float | None = None
    p: float | None = None
    verified: bool | None = None
    s_above_threshold: bool | None = None
    tau_certified: bool | None = None
    gaussian_certified: bool | None = None
    beta2_star: float | None = None
    generic_certified: bool | None = None
    error: str | None = None


@dataclass(frozen=True)
class NoiseLevelResult:
    sigma: float
    threshold: float
    calibration: CalibrationSet
    trials: list
    aggregates: dict
    region: object


@dataclass(frozen=True)
class VerificationReport:
    config: ExperimentConfig
    models: list
    noise_levels: list
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config.to_dict(),
            "models": [dataclasses.asdict(m) for m in self.models],
            "noise_levels": [
                {
                    "sigma": level.sigma,
                    "threshold": level.threshold,
                    "calibration": calibration_to_dict(level.calibration),
                    "trials": [dataclasses.asdict(t) for t in level.trials],
                    "aggregates": dict(level.aggregates),
                    "region": {
                        "sigma": level.region.sigma,
                        "threshold": level.region.threshold,
                        "r_range": list(level.region.r_range),
                        "w_range": list(level.region.w_range),
                        "grid_n": level.region.grid_n,
                        "area": level.region.area,
                    },
                }
                for level in self.noise_levels
            ],
        }


def resolve_threads(threads=None) -> int:
    """Worker count: explicit argument, else CERTDW_THREADS, else a small
    default. The result never changes, only the wall time."""
    if threads is None:
        env = os.environ.get("CERTDW_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise DomainError(f"CERTDW_THREADS must be an integer: {env!r}") \
                    from exc
        else:
            threads = min(4, os.cpu_count() or 1)
    threads = int(threads)
    if threads < 1:
        raise DomainError(f"thread count must be >= 1, got {threads}")
    return threads


def _make_trigger(config: ExperimentConfig, stream: SeededStream) -> TriggerSpec:
    if config.trigger_kind == BADNETS_PATCH:
        return make_badnets_trigger(config.shape, config.target_label, stream,
                                    patch_size=config.patch_size)
    if config.trigger_kind == BLENDED_PATCH:
        return make_blended_patch_trigger(config.shape, config.target_label, stream,
                                          patch_size=config.patch_size,
                                          blend_alpha=config.blend_alpha)
    if config.trigger_kind == BLENDED_NOISE:
        return make_blended_noise_trigger(config.shape, config.target_label, stream,
                                          l2_budget=config.l2_budget)
    raise DomainError(f"unknown trigger kind {config.trigger_kind!r}")


def _train(config: ExperimentConfig, data: LabeledDataset, stream: SeededStream,
           model_id: str) -> Classifier:
    return train_model(data, arch=config.arch, epochs=config.epochs, lr=config.lr,
                       batch=config.batch, stream=stream, hidden=config.hidden,
                       model_id=model_id)


def _audit_one(job):
    """Evaluate one suspicious model at one noise level; never raises."""
    (config, calib, threshold, spec, sigma, role, idx, model, trigger,
     trigger_id, test, stream) = job
    trial_id = f"{role}-{idx:03d}@sigma={sigma!r}"
    base = dict(trial_id=trial_id, sigma=sigma, model_id=model.model_id,
                role=role, threshold=threshold, trigger_id=trigger_id)
    try:
        reps = select_class_representatives(
            model, test, stream.child("reps"),
            samples_per_class=config.samples_per_class,
        )
        s_val = stability(model, reps, config.target_label, spec, config.samples,
                          stream.child("stab"))
        if trigger is not None:
            w_val = watermark_robustness(model, reps, trigger, spec, config.samples,
                                         stream.child("wr"))
            flat_reps = reps.samples.reshape((-1,) + config.shape)
            residuals = trigger_residual_norms(trigger, flat_reps, clip=True)
            r_val = float(residuals.max())
            decision = verify(calib, w_val, config.alpha0)
            b2 = beta2_star_gaussian(w_val, residuals, sigma)
            return TrialRecord(
                **base, W=w_val, S=s_val, R=r_val, p=decision.p_value,
                verified=decision.trained_on_protected,
                s_above_threshold=bool(s_val > threshold),
                tau_certified=tau_certified(w_val, s_val, threshold),
                gaussian_certified=gaussian_condition(w_val, r_val, sigma, threshold),
                beta2_star=b2,
                generic_certified=generic_condition(b2, threshold),
            )
        return TrialRecord(**base, S=s_val,
                           s_above_threshold=bool(s_val > threshold))
    except CertDWError as exc:
        logger.warning("trial %s failed: %s", trial_id, exc)
        return TrialRecord(**base, error=str(exc))


def aggregates_from_trials(trials, models, sigma: float, threshold: float) -> dict:
    """Recompute the aggregate block from per-trial and per-model records.

    Kept separate so reports can be audited: stored aggregates must equal
    this function applied to the stored rows.
    """
    ok = [t for t in trials if t.error is None]
    wm = [t for t in ok if t.role == ROLE_WATERMARKED]
    ind = [t for t in ok if t.role == ROLE_INDEPENDENT]
    wm_models = [m for m in models if m.role == ROLE_WATERMARKED]
    benign_models = [m for m in models if m.role == ROLE_BENIGN]

    def rate(records):
        if not records:
            return None
        return sum(1 for t in records if t.s_above_threshold) / len(records)

    points = [(t.R, t.W) for t in wm if t.R is not None and t.W is not None]
    ba_benign = (sum(m.ba for m in benign_models) / len(benign_models)
                 if benign_models else None)
    ba_wm = sum(m.ba for m in wm_models) / len(wm_models) if wm_models else None
    return {
        "vsr": rate(wm),
        "fpr": rate(ind),
        "wca": wca(points, sigma, threshold) if points else None,
        "wsr_mean": (sum(m.wsr for m in wm_models) / len(wm_models)
                     if wm_models else None),
        "ba_benign_mean": ba_benign,
        "ba_watermarked_mean": ba_wm,
        "ba_drop": (ba_benign - ba_wm
                    if ba_benign is not None and ba_wm is not None else None),
        "n_watermarked_trials": len(wm),
        "n_independent_trials": len(ind),
        "n_failed_trials": len(trials) - len(ok),
    }


def run_pipeline(config: ExperimentConfig, threads=None) -> VerificationReport:
    """Train the model populations, calibrate, audit, aggregate."""
    workers = resolve_threads(threads)
    root = SeededStream(config.master_seed)
    train_ds, test_ds = gen_toy_dataset(
        config.classes, config.per_class, config.shape, config.data_noise_std,
        root.child("data"),
    )

    triggers = [
        _make_trigger(config, root.child("trigger", t))
        for t in range(config.num_watermarked)
    ]

    def train_benign(j):
        return _train(config, train_ds, root.child("train-benign", j),
                      f"benign-{j:03d}")

    def train_independent(j):
        return _train(config, train_ds, root.child("train-independent", j),
                      f"independent-{j:03d}")

    def train_watermarked(t):
        poisoned = poison_dataset(train_ds, triggers[t], config.watermark_rate,
                                  root.child("poison", t))
        return _train(config, poisoned.dataset, root.child("train-watermarked", t),
                      f"watermarked-{t:03d}")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        benign = list(pool.map(train_benign, range(config.num_benign)))
        watermarked = list(pool.map(train_watermarked,
                                    range(config.num_watermarked)))
        independent = list(pool.map(train_independent,
                                    range(config.num_independent)))

        models = []
        for model in benign:
            models.append(ModelRecord(model.model_id, ROLE_BENIGN,
                                      evaluate_ba(model, test_ds)))
        for t, model in enumerate(watermarked):
            models.append(ModelRecord(
                model.model_id, ROLE_WATERMARKED, evaluate_ba(model, test_ds),
                wsr=evaluate_wsr(model, test_ds, triggers[t]),
                trigger_id=f"trigger-{t:03d}",
            ))
        for model in independent:
            models.append(ModelRecord(model.model_id, ROLE_INDEPENDENT,
                                      evaluate_ba(model, test_ds)))

        levels = []
        for s_idx, sigma in enumerate(config.noise_levels):
            spec = NoiseSpec.gaussian(sigma)
            calib = build_calibration_set(
                benign, test_ds, spec, config.samples, config.kappa,
                root.child("calib", s_idx),
                samples_per_class=config.samples_per_class, executor=pool,
            )
            threshold = calibration_threshold(calib, config.alpha0)

            jobs = []
            for t, model in enumerate(watermarked):
                jobs.append((config, calib, threshold, spec, sigma,
                             ROLE_WATERMARKED, t, model, triggers[t],
                             f"trigger-{t:03d}", test_ds,
                             root.child("verify", s_idx, ROLE_WATERMARKED, t)))
            for i, model in enumerate(independent):
                if triggers:
                    t = i % len(triggers)
                    trig, trig_id = triggers[t], f"trigger-{t:03d}"
                else:
                    trig, trig_id = None, None
                jobs.append((config, calib, threshold, spec, sigma,
                             ROLE_INDEPENDENT, i, model, trig, trig_id, test_ds,
                             root.child("verify", s_idx, ROLE_INDEPENDENT, i)))
            trials = list(pool.map(_audit_one, jobs))

            levels.append(NoiseLevelResult(
                sigma=sigma,
                threshold=threshold,
                calibration=calib,
                trials=trials,
                aggregates=aggregates_from_trials(trials, models, sigma, threshold),
                region=certified_region(
                    sigma, threshold, (0.0, config.region_r_max), (0.0, 1.0),
                    config.region_grid_n,
                ),
            ))

    return VerificationReport(config=config, models=models, noise_levels=levels)


def perturbation_grid_sweep(model: Classifier, trigger: TriggerSpec,
                            test: LabeledDataset, eps_n_list, eps_a_list,
                            spec: NoiseSpec, stream: SeededStream) -> np.ndarray:
    """WSR of triggered test samples over a (noise x adversarial) offset grid.

    The noise direction is the sign of a single draw from the smoothing
    distribution (drawn once per sweep); the adversarial direction is the
    per-sample sign of the input gradient of the target label's loss at the
    triggered sample. Entry (0, 0) reproduces ``evaluate_wsr`` exactly.
    """
    eps_n = [float(v) for v in eps_n_list]
    eps_a = [float(v) for v in eps_a_list]
    if not eps_n or not eps_a:
        raise DomainError("epsilon grids must be nonempty")
    if len(test) == 0:
        raise DomainError("cannot sweep an empty dataset")
    keep = test.labels != trigger.target_label
    if not keep.any():
        raise DomainError("no test samples outside the target class")
    triggered = np.stack(
        [apply_trigger(x, trigger, clip=True) for x in test.tensors[keep]]
    )

    d_noise = np.sign(sample_noise(spec, trigger.shape,
                                   stream.child("noise-direction")))
    needs_grad = any(v != 0.0 for v in eps_a)
    if needs_grad and not isinstance(model, MLPClassifier):
        raise UnsupportedOperationError(
            "nonzero adversarial offsets need input gradients (MLP only)"
        )
    if needs_grad:
        d_adv = np.stack(
            [np.sign(model.input_gradient(x, trigger.target_label))
             for x in triggered]
        )
    else:
        d_adv = np.zeros_like(triggered)

    grid = np.empty((len(eps_n), len(eps_a)))
    for i, en in enumerate(eps_n):
        for j, ea in enumerate(eps_a):
            batch = triggered + en * d_noise[None] + ea * d_adv
            preds = model.predict_batch(batch)
            grid[i, j] = float(np.mean(preds == trigger.target_label))
    return grid


def save_grid(path, eps_n_list, eps_a_list, grid: np.ndarray) -> None:
    lines = ["eps_n,eps_a,wsr"]
    for i, en in enumerate(eps_n_list):
        for j, ea in enumerate(eps_a_list):
            lines.append(f"{float(en)!r},{float(ea)!r},{float(grid[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


_TRIAL_COLUMNS = ("trial_id", "sigma", "model_id", "role", "trigger_id", "W", "S",
                  "R", "p", "threshold", "verified", "s_above_threshold",
                  "tau_certified", "gaussian_certified", "beta2_star",
                  "generic_certified", "error")

_AGG_COLUMNS = ("sigma", "threshold", "vsr", "fpr", "wca", "wsr_mean",
                "ba_benign_mean", "ba_watermarked_mean", "ba_drop",
                "n_watermarked_trials", "n_independent_trials", "n_failed_trials")


def emit_report(report: VerificationReport, out_dir) -> list:
    """Write report.json, trials.csv, aggregates.csv and per-level region
    CSVs into ``out_dir``; returns the written paths.

    Output is byte-deterministic for a fixed report (no timestamps, repr
    float formatting, LF line endings).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True)
                           + "\n")
    written.append(report_path)

    lines = [",".join(_TRIAL_COLUMNS)]
    for level in report.noise_levels:
        for t in level.trials:
            row = dataclasses.asdict(t)
            lines.append(",".join(_csv_cell(row[c]) for c in _TRIAL_COLUMNS))
    trials_path = out_dir / "trials.csv"
    trials_path.write_text("\n".join(lines) + "\n")
    written.append(trials_path)

    lines = [",".join(_AGG_COLUMNS)]
    for level in report.noise_levels:
        row = dict(level.aggregates, sigma=level.sigma, threshold=level.threshold)
        lines.append(",".join(_csv_cell(row[c]) for c in _AGG_COLUMNS))
    agg_path = out_dir / "aggregates.csv"
    agg_path.write_text("\n".join(lines) + "\n")
    written.append(agg_path)

    for s_idx, level in enumerate(report.noise_levels):
        csv_path = out_dir / f"region_{s_idx:02d}.csv"
        save_region(level.region, csv_path)
        written.extend([csv_path, csv_path.with_suffix(".json")])
    return written


def load_report(path) -> dict:
    """Read back an emitted report.json as a plain dict."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read report at {path}: {exc}") from exc
