"""Monte Carlo prediction distributions under a smoothing distribution.

The prediction distribution (PD) of an input is the vector of label
frequencies the classifier produces when i.i.d. per-coordinate noise is
added M times. Counts are exact integers; frequencies are counts / M.

Noise is consumed in blocks of :data:`NOISE_BLOCK` draws, one substream per
block, offset consecutively from the caller's stream. Consequently an
estimate with M = 2m draws equals the frequency-merge of two m-draw
estimates on consecutive substreams whenever m is a multiple of the block
size, and block-parallel evaluation reproduces the serial result exactly.

Noisy inputs are NOT clipped to the pixel box by default: noise is added
directly to the input, and the toy classifiers accept unbounded inputs.
Pass ``clip=True`` to clamp to [0, 1] before classification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import Classifier
from .errors import DomainError
from .numerics import SeededStream, std_normal_cdf

NOISE_BLOCK = 256

GAUSSIAN = "gaussian"
UNIFORM = "uniform"


@dataclass(frozen=True)
class NoiseSpec:
    """Smoothing distribution: i.i.d. per coordinate, Gaussian or uniform.

    Exactly one family's parameters are active: ``sigma`` for Gaussian,
    ``bounds = (e, h)`` with e < h for uniform.
    """

    family: str
    sigma: float | None = None
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.family == GAUSSIAN:
            if self.sigma is None or self.bounds is not None:
                raise DomainError("gaussian noise takes sigma and no bounds")
            if not (float(self.sigma) > 0.0):
                raise DomainError(f"sigma must be positive, got {self.sigma}")
            object.__setattr__(self, "sigma", float(self.sigma))
        elif self.family == UNIFORM:
            if self.bounds is None or self.sigma is not None:
                raise DomainError("uniform noise takes bounds and no sigma")
            e, h = (float(v) for v in self.bounds)
            if not e < h:
                raise DomainError(f"uniform bounds require e < h, got ({e}, {h})")
            object.__setattr__(self, "bounds", (e, h))
        else:
            raise DomainError(f"unknown noise family {self.family!r}")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseSpec":
        return cls(GAUSSIAN, sigma=sigma)

    @classmethod
    def uniform(cls, e: float, h: float) -> "NoiseSpec":
        return cls(UNIFORM, bounds=(e, h))

    def to_dict(self) -> dict:
        if self.family == GAUSSIAN:
            return {"family": GAUSSIAN, "sigma": self.sigma}
        return {"family": UNIFORM, "bounds": list(self.bounds)}

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSpec":
        if doc.get("family") == GAUSSIAN:
            return cls.gaussian(doc["sigma"])
        if doc.get("family") == UNIFORM:
            return cls.uniform(*doc["bounds"])
        raise DomainError(f"malformed noise spec {doc!r}")


@dataclass(frozen=True)
class PredictionDistribution:
    """Exact label counts from M noisy evaluations of one input."""

    counts: np.ndarray
    sample_count: int

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "sample_count", int(self.sample_count))
        if counts.min(initial=0) < 0 or counts.sum() != self.sample_count:
            raise DomainError("counts must be nonnegative and sum to sample_count")

    @property
    def probs(self) -> np.ndarray:
        """Frequencies counts / M; each entry an integer multiple of 1/M."""
        return self.counts / self.sample_count

    def merge(self, other: "PredictionDistribution") -> "PredictionDistribution":
        """Exact count addition of two estimates of the same input."""
        if other.counts.shape != self.counts.shape:
            raise DomainError("cannot merge distributions over different label sets")
        return PredictionDistribution(
            self.counts + other.counts, self.sample_count + other.sample_count
        )


def sample_noise(spec: NoiseSpec, shape, stream: SeededStream) -> np.ndarray:
    """One deterministic tensor of i.i.d. draws from the noise distribution.

    ``shape`` may include leading batch dimensions.
    """
    gen = stream.generator()
    if spec.family == GAUSSIAN:
        return gen.standard_normal(shape) * spec.sigma
    e, h = spec.bounds
    return gen.uniform(e, h, shape)


def estimate_pd(classifier: Classifier, x, spec: NoiseSpec, M: int,
                stream: SeededStream, clip: bool = False) -> PredictionDistribution:
    """Monte Carlo PD of ``x``: frequency of each predicted label over M draws."""
    M = int(M)
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != classifier.input_shape:
        raise DomainError(
            f"input shape {x.shape} does not match classifier shape "
            f"{classifier.input_shape}"
        )
    counts = np.zeros(classifier.num_classes, dtype=np.int64)
    done = 0
    block = 0
    while done < M:
        width = min(NOISE_BLOCK, M - done)
        noise = sample_noise(spec, (width,) + classifier.input_shape,
                             stream.offset(block))
        noisy = x[None] + noise
        if clip:
            np.clip(noisy, 0.0, 1.0, out=noisy)
        counts += classifier.label_counts(
            np.ascontiguousarray(noisy.reshape(width, -1))
        )
        done += width
        block += 1
    return PredictionDistribution(counts, M)


def analytic_pd_linear(w, b: float, x, sigma: float) -> float:
    """Closed-form smoothed positive-class probability of a binary linear rule.

    For the rule ``sign(w . (x + eps) + b)`` with Gaussian eps of scale
    sigma per coordinate, the probability of the positive class is
    ``Phi((w . x + b) / (sigma * ||w||))``; the independent oracle used to
    validate the Monte Carlo estimator.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if w.shape != x.shape:
        raise DomainError(f"w and x disagree in size: {w.shape} vs {x.shape}")
    sigma = float(sigma)
    if sigma <= 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise DomainError("zero weight vector has no decision boundary")
    return std_normal_cdf((float(w @ x) + float(b)) / (sigma * norm))
