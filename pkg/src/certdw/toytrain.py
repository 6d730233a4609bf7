"""Synthetic datasets and desk-scale model training.

Class-blob data stands in for real image datasets: each class is a fixed
random base pattern plus per-sample Gaussian pixel noise, clipped to the
unit box. Training is plain mini-batch SGD on softmax cross-entropy with
all stochastic choices (init, shuffles) drawn from one seeded stream, so
identical streams reproduce identical model files byte for byte.

Dataset directory layout: ``meta.json`` ({shape, count, num_classes,
split}), ``data.f32le`` (raw little-endian float32, C order) and
``labels.u32le`` (raw little-endian uint32).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .backend import kernels
from .classifiers import Classifier, LinearClassifier, MLPClassifier
from .errors import DomainError, TrainingFailureError
from .numerics import SeededStream
from .watermark import TriggerSpec, apply_trigger

ARCH_LOGISTIC = "logistic"
ARCH_MLP = "mlp"


@dataclass(frozen=True)
class LabeledDataset:
    """N image tensors with integer labels and a split tag."""

    tensors: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        tensors = np.ascontiguousarray(self.tensors, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if tensors.ndim != 4:
            raise DomainError(f"tensors must be (N, C, H, W), got {tensors.shape}")
        if labels.shape != (tensors.shape[0],):
            raise DomainError("labels and tensors disagree in length")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DomainError("labels out of range")
        object.__setattr__(self, "tensors", tensors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    def __len__(self) -> int:
        return self.tensors.shape[0]

    @property
    def shape(self) -> tuple:
        return self.tensors.shape[1:]

    def replace(self, **kw) -> "LabeledDataset":
        return replace(self, **kw)


def save_dataset(directory, data: LabeledDataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "shape": list(data.shape),
        "count": len(data),
        "num_classes": data.num_classes,
        "split": data.split,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    (directory / "data.f32le").write_bytes(
        np.ascontiguousarray(data.tensors, dtype="<f4").tobytes()
    )
    (directory / "labels.u32le").write_bytes(
        np.ascontiguousarray(data.labels, dtype="<u4").tobytes()
    )


def load_dataset(directory) -> LabeledDataset:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
        shape = tuple(meta["shape"])
        count = int(meta["count"])
        tensors = np.frombuffer(
            (directory / "data.f32le").read_bytes(), dtype="<f4"
        ).reshape((count,) + shape)
        labels = np.frombuffer(
            (directory / "labels.u32le").read_bytes(), dtype="<u4"
        ).astype(np.int64)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DomainError(f"malformed dataset directory {directory}: {exc}") from exc
    return LabeledDataset(tensors, labels, meta["num_classes"],
                          meta.get("split", "train"))


def gen_toy_dataset(K: int, per_class: int, shape=(3, 8, 8), noise_std: float = 0.1,
                    stream: SeededStream | None = None):
    """Class-blob data: fixed random base pattern per class plus pixel noise.

    Returns a balanced 80/20 (train, test) pair. Base patterns are drawn
    uniformly on [0.1, 0.9] per pixel so additive triggers and noise are
    not silently destroyed by clipping at the box boundary.
    """
    K = int(K)
    per_class = int(per_class)
    if K < 2 or per_class < 2:
        raise DomainError("need K >= 2 classes and per_class >= 2 samples")
    if stream is None:
        raise DomainError("gen_toy_dataset requires a SeededStream")
    shape = tuple(int(s) for s in shape)
    gen = stream.generator()
    centers = gen.uniform(0.1, 0.9, (K,) + shape)
    n_train = int(round(0.8 * per_class))
    train_parts, test_parts = [], []
    for k in range(K):
        noise = gen.standard_normal((per_class,) + shape) * float(noise_std)
        samples = np.clip(centers[k][None] + noise, 0.0, 1.0).astype(np.float32)
        train_parts.append((samples[:n_train], k))
        test_parts.append((samples[n_train:], k))

    def _build(parts, split):
        tensors = np.concatenate([p[0] for p in parts])
        labels = np.concatenate(
            [np.full(p[0].shape[0], p[1], dtype=np.int64) for p in parts]
        )
        return LabeledDataset(tensors, labels, K, split)

    return _build(train_parts, "train"), _build(test_parts, "test")


def train_model(train: LabeledDataset, arch: str = ARCH_MLP, epochs: int = 100,
                lr: float = 0.1, batch: int = 32, stream: SeededStream | None = None,
                hidden: int = 32, model_id=None) -> Classifier:
    """Mini-batch SGD on softmax cross-entropy; deterministic given stream.

    ``epochs=0`` returns the seeded initialization untouched. Raises
    :class:`TrainingFailureError` if the loss or parameters go non-finite.
    """
    if len(train) == 0:
        raise DomainError("cannot train on an empty dataset")
    if arch not in (ARCH_LOGISTIC, ARCH_MLP):
        raise DomainError(f"unknown architecture {arch!r}")
    epochs = int(epochs)
    batch = int(batch)
    if epochs < 0 or batch < 1 or not float(lr) > 0.0:
        raise DomainError("epochs must be >= 0, batch >= 1 and lr > 0")
    if stream is None:
        raise DomainError("train_model requires a SeededStream")

    n = len(train)
    d = int(math.prod(train.shape))
    k = train.num_classes
    xs = np.ascontiguousarray(train.tensors.reshape(n, d), dtype=np.float64)
    ys = np.ascontiguousarray(train.labels, dtype=np.int64)
    gen = stream.generator()

    if arch == ARCH_LOGISTIC:
        wt = gen.standard_normal((d, k)) * 0.01
        b = np.zeros(k)
        order = _shuffles(gen, epochs, n)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            losses = kernels().logistic_train(xs, ys, order, wt, b, float(lr),
                                              batch)
        _check_finite(losses, wt, b)
        return LinearClassifier(wt.T.copy(), b, train.shape, model_id=model_id)

    hidden = int(hidden)
    if hidden < 1:
        raise DomainError("hidden width must be >= 1")
    w1t = gen.standard_normal((d, hidden)) * math.sqrt(2.0 / d)
    b1 = np.zeros(hidden)
    w2t = gen.standard_normal((hidden, k)) * math.sqrt(1.0 / hidden)
    b2 = np.zeros(k)
    order = _shuffles(gen, epochs, n)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        losses = kernels().mlp_train(xs, ys, order, w1t, b1, w2t, b2, float(lr),
                                     batch)
    _check_finite(losses, w1t, b1, w2t, b2)
    return MLPClassifier(w1t.T.copy(), b1, w2t.T.copy(), b2, train.shape,
                         model_id=model_id)


def _shuffles(gen, epochs, n):
    order = np.empty((epochs, n), dtype=np.int64)
    for e in range(epochs):
        order[e] = gen.permutation(n)
    return order


def _check_finite(losses, *params):
    if not np.isfinite(losses).all() or any(
        not np.isfinite(p).all() for p in params
    ):
        raise TrainingFailureError("training diverged: non-finite loss or parameters")


def evaluate_ba(model: Classifier, test: LabeledDataset) -> float:
    """Benign accuracy: fraction of test samples predicted as their label."""
    if len(test) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    preds = model.predict_batch(test.tensors)
    return float(np.mean(preds == test.labels))


def evaluate_wsr(model: Classifier, test: LabeledDataset, trig: TriggerSpec) -> float:
    """Watermark success rate: triggered samples predicted as the target.

    Samples whose ground-truth label already equals the target are excluded
    from the denominator so a perfect benign classifier scores 0, not 1/K.
    """
    if len(test) == 0:
        raise DomainError("cannot evaluate on an empty dataset")
    keep = test.labels != trig.target_label
    if not keep.any():
        raise DomainError("no test samples outside the target class")
    triggered = np.stack(
        [apply_trigger(x, trig, clip=True) for x in test.tensors[keep]]
    )
    preds = model.predict_batch(triggered)
    return float(np.mean(preds == trig.target_label))
