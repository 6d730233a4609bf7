"""Calibration sets of benign-model PP values and the conformal decision.

The calibration set holds one principal-probability value per benign model,
sorted ascending. Because benign models are trained on a dataset rather
than the true distribution, the PP sample is heavy-tailed; the m = floor(
kappa * J) largest values are treated as outliers and capped out of the
p-value count.

The p-value of a suspicious model's watermark-robustness W is

    p = (1 + min(#{P_C^j < W}, J - m)) / (J - m + 1)

with a strict inequality in the indicator: ties between W and a
calibration value do not count toward the suspicious model (conservative
toward non-accusation). The equivalent order-statistic form compares W
against the (J - m - floor(alpha0 * (J - m + 1)))-th smallest value, the
"calibration threshold".
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

from pathlib import Path

import numpy as np

from .errors import (
    DomainError,
    InsufficientCalibrationError,
    RepresentativeUnavailableError,
)
from .numerics import SeededStream
from .smoothing import NoiseSpec
from .stats import principal_probability, select_class_representatives
from .toytrain import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibrationSet:
    """Sorted PP values from J benign models plus the filtering proportion.

    ``noise_spec``, ``sample_count`` and ``master_seed`` are provenance
    carried into the calibration file; they do not affect the arithmetic.
    """

    pp_values: np.ndarray
    kappa: float
    model_ids: list[str] = field(default_factory=list)
    noise_spec: NoiseSpec | None = None
    sample_count: int | None = None
    master_seed: int | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.pp_values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DomainError("calibration set needs a nonempty value vector")
        if (np.diff(values) < 0).any():
            values = np.sort(values)
        if values[0] < 0.0 or values[-1] > 1.0:
            raise DomainError("PP values must lie in [0, 1]")
        kappa = float(self.kappa)
        if not 0.0 <= kappa < 1.0:
            raise DomainError(f"kappa must lie in [0, 1), got {kappa}")
        object.__setattr__(self, "pp_values", values)
        object.__setattr__(self, "kappa", kappa)

    @property
    def size(self) -> int:
        """J, the number of calibration models."""
        return int(self.pp_values.size)

    @property
    def num_outliers(self) -> int:
        """m = floor(kappa * J), the count of filtered largest values."""
        return int(math.floor(self.kappa * self.size))


@dataclass(frozen=True)
class VerificationDecision:
    """Audit record of one conformal decision."""

    p_value: float
    threshold: float
    trained_on_protected: bool


def build_calibration_set(models, pool: LabeledDataset, spec: NoiseSpec, M: int,
                          kappa: float, stream: SeededStream,
                          samples_per_class: int = 1,
                          executor=None) -> CalibrationSet:
    """One PP value per benign model; models without representatives are
    excluded and logged (J shrinks accordingly).

    ``executor`` may be a concurrent.futures executor; per-model work uses
    disjoint substreams, so parallel and serial runs agree exactly.
    """
    models = list(models)
    if len(models) < 2:
        raise DomainError(f"calibration needs at least 2 models, got {len(models)}")

    def one(job):
        j, model = job
        model_id = model.model_id or f"model-{j}"
        try:
            reps = select_class_representatives(
                model, pool, stream.child("calib-reps", j),
                samples_per_class=samples_per_class,
            )
        except RepresentativeUnavailableError as exc:
            return model_id, None, exc
        pp = principal_probability(model, reps, spec, M, stream.child("calib-pp", j))
        return model_id, pp, None

    mapper = executor.map if executor is not None else map
    values, ids = [], []
    for model_id, pp, exc in mapper(one, enumerate(models)):
        if exc is not None:
            logger.warning("excluding %s from calibration: %s", model_id, exc)
            continue
        values.append(pp)
        ids.append(model_id)
    if len(values) < 2:
        raise InsufficientCalibrationError(
            f"only {len(values)} models admitted class representatives"
        )
    order = np.argsort(values, kind="stable")
    return CalibrationSet(
        pp_values=np.asarray(values)[order],
        kappa=kappa,
        model_ids=[ids[i] for i in order],
        noise_spec=spec,
        sample_count=int(M),
        master_seed=stream.master_seed,
    )


def p_value(calib: CalibrationSet, W: float) -> float:
    """Conformal p-value of a watermark-robustness value against the set.

    The count runs over all J values with a strict inequality and is capped
    at J - m; since filtering removes the m largest values, the cap matches
    counting over the kept set whenever W exceeds the kept maximum.
    """
    W = float(W)
    j = calib.size
    m = calib.num_outliers
    count = int(np.sum(calib.pp_values < W))
    return (1 + min(count, j - m)) / (j - m + 1)


def calibration_threshold(calib: CalibrationSet, alpha0: float) -> float:
    """The (J - m - floor(alpha0 * (J - m + 1)))-th smallest PP value.

    Exceeding this order statistic of the full sorted list is equivalent
    (in general position) to the p-value decision at significance alpha0.
    """
    alpha0 = float(alpha0)
    if not 0.0 < alpha0 < 1.0:
        raise DomainError(f"alpha0 must lie in (0, 1), got {alpha0}")
    j = calib.size
    m = calib.num_outliers
    index = j - m - int(math.floor(alpha0 * (j - m + 1)))
    if index < 1:
        raise InsufficientCalibrationError(
            f"calibration set of size {j} (m={m}) too small for alpha0={alpha0}"
        )
    return float(calib.pp_values[index - 1])


def verify(calib: CalibrationSet, W: float, alpha0: float) -> VerificationDecision:
    """Decision record: trained-on-protected iff p >= 1 - alpha0."""
    alpha0 = float(alpha0)
    if not 0.0 < alpha0 < 1.0:
        raise DomainError(f"alpha0 must lie in (0, 1), got {alpha0}")
    p = p_value(calib, W)
    threshold = calibration_threshold(calib, alpha0)
    return VerificationDecision(
        p_value=p, threshold=threshold, trained_on_protected=bool(p >= 1.0 - alpha0)
    )


def calibration_to_dict(calib: CalibrationSet) -> dict:
    return {
        "pp_values": calib.pp_values.tolist(),
        "kappa": calib.kappa,
        "m": calib.num_outliers,
        "noise_spec": calib.noise_spec.to_dict() if calib.noise_spec else None,
        "M": calib.sample_count,
        "model_ids": list(calib.model_ids),
        "master_seed": calib.master_seed,
    }


def calibration_from_dict(doc: dict) -> CalibrationSet:
    calib = CalibrationSet(
        pp_values=np.asarray(doc["pp_values"], dtype=np.float64),
        kappa=doc["kappa"],
        model_ids=list(doc.get("model_ids") or []),
        noise_spec=NoiseSpec.from_dict(doc["noise_spec"]) if doc.get("noise_spec")
        else None,
        sample_count=doc.get("M"),
        master_seed=doc.get("master_seed"),
    )
    if "m" in doc and int(doc["m"]) != calib.num_outliers:
        raise DomainError(
            f"calibration file inconsistency: stored m={doc['m']} but "
            f"floor(kappa*J)={calib.num_outliers}"
        )
    return calib


def save_calibration(path, calib: CalibrationSet) -> None:
    Path(path).write_text(json.dumps(calibration_to_dict(calib), indent=2) + "\n")


def load_calibration(path) -> CalibrationSet:
    try:
        return calibration_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DomainError(f"malformed calibration file {path}: {exc}") from exc
