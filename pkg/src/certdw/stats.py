"""The pipeline's core statistics: principal probability, watermark
robustness, and stability, all estimated from class-representative samples.

A representative set holds, for each class k, a pool sample that the model
under study predicts correctly as k. Principal probability (PP) is the max
entry of the class-averaged prediction distribution of those samples under
noise; watermark robustness (WR) is the minimum probability that their
triggered versions map to the target label; stability (S) is the same
minimum without the trigger.

Per-sample noise comes from disjoint substreams derived as
``stream.child(k, i)``, so WR and S evaluated with the same stream see the
same noise — with a zero trigger they coincide exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import Classifier
from .errors import DomainError, RepresentativeUnavailableError
from .numerics import SeededStream
from .smoothing import NoiseSpec, estimate_pd
from .toytrain import LabeledDataset
from .watermark import TriggerSpec, apply_trigger


@dataclass(frozen=True)
class ClassRepresentatives:
    """Correctly predicted samples, ``samples[k, i]`` the i-th one of class k.

    ``source`` records which model certified the correctness predicate.
    """

    samples: np.ndarray  # (K, per_class, C, H, W)
    source: str | None = None

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 5:
            raise DomainError(
                f"representatives must be (K, n, C, H, W), got {samples.shape}"
            )
        object.__setattr__(self, "samples", samples)

    @property
    def num_classes(self) -> int:
        return self.samples.shape[0]

    @property
    def per_class(self) -> int:
        return self.samples.shape[1]


def select_class_representatives(classifier: Classifier, pool: LabeledDataset,
                                 stream: SeededStream,
                                 samples_per_class: int = 1) -> ClassRepresentatives:
    """Uniformly random correctly-predicted pool samples, one batch per class.

    Raises :class:`RepresentativeUnavailableError` naming the first class
    with no (or too few) correctly predicted candidates.
    """
    samples_per_class = int(samples_per_class)
    if samples_per_class < 1:
        raise DomainError("samples_per_class must be >= 1")
    if pool.num_classes != classifier.num_classes:
        raise DomainError(
            f"pool has {pool.num_classes} classes, classifier expects "
            f"{classifier.num_classes}"
        )
    preds = classifier.predict_batch(pool.tensors)
    gen = stream.generator()
    chosen = np.empty(
        (classifier.num_classes, samples_per_class) + pool.shape, dtype=np.float64
    )
    for k in range(classifier.num_classes):
        eligible = np.flatnonzero((pool.labels == k) & (preds == k))
        if eligible.size < samples_per_class:
            raise RepresentativeUnavailableError(k)
        picks = gen.choice(eligible, size=samples_per_class, replace=False)
        chosen[k] = pool.tensors[picks]
    return ClassRepresentatives(chosen, source=classifier.model_id)


def principal_probability(classifier: Classifier, reps: ClassRepresentatives,
                          spec: NoiseSpec, M: int, stream: SeededStream) -> float:
    """Max entry of the entry-wise average of the per-sample PDs."""
    _check_reps(classifier, reps)
    acc = np.zeros(classifier.num_classes)
    for k in range(reps.num_classes):
        for i in range(reps.per_class):
            pd = estimate_pd(classifier, reps.samples[k, i], spec, M,
                             stream.child(k, i))
            acc += pd.probs
    acc /= reps.num_classes * reps.per_class
    return float(acc.max())


def watermark_robustness(classifier: Classifier, reps: ClassRepresentatives,
                         trigger: TriggerSpec, spec: NoiseSpec, M: int,
                         stream: SeededStream, clip: bool = True) -> float:
    """Minimum over representatives of the target-label PD entry after
    embedding the trigger (triggered images clipped to [0, 1] by default)."""
    _check_reps(classifier, reps)
    worst = 1.0
    for k in range(reps.num_classes):
        for i in range(reps.per_class):
            triggered = apply_trigger(reps.samples[k, i], trigger, clip=clip)
            pd = estimate_pd(classifier, triggered, spec, M, stream.child(k, i))
            worst = min(worst, float(pd.probs[trigger.target_label]))
    return worst


def stability(classifier: Classifier, reps: ClassRepresentatives, target: int,
              spec: NoiseSpec, M: int, stream: SeededStream) -> float:
    """Minimum target-label PD entry over the un-triggered representatives."""
    _check_reps(classifier, reps)
    target = int(target)
    if not 0 <= target < classifier.num_classes:
        raise DomainError(f"target label {target} out of range")
    worst = 1.0
    for k in range(reps.num_classes):
        for i in range(reps.per_class):
            pd = estimate_pd(classifier, reps.samples[k, i], spec, M,
                             stream.child(k, i))
            worst = min(worst, float(pd.probs[target]))
    return worst


def _check_reps(classifier, reps):
    if reps.num_classes != classifier.num_classes:
        raise DomainError(
            f"representatives cover {reps.num_classes} classes, classifier has "
            f"{classifier.num_classes}"
        )
    if reps.samples.shape[2:] != classifier.input_shape:
        raise DomainError("representative sample shape does not match classifier")
