"""Trigger construction, application, dataset poisoning, radius measurement.

Three trigger families are supported, mirroring the usual visible/invisible
split in backdoor-style dataset watermarks:

* ``badnets-patch`` — a small random pixel patch stamped over the image;
* ``blended-patch`` — the same patch alpha-blended into the image;
* ``blended-noise`` — a full-image additive pattern with an exact l2 norm.

Patch positions are drawn once at generation time and stay fixed for the
life of the trigger. Stored watermarked images are clipped to [0, 1] by
default; the radius used for certification is always measured on the
actual applied residuals, so clipping can only shrink it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateTriggerError, DomainError
from .numerics import SeededStream, l2_rescale

BADNETS_PATCH = "badnets-patch"
BLENDED_PATCH = "blended-patch"
BLENDED_NOISE = "blended-noise"
_KINDS = (BADNETS_PATCH, BLENDED_PATCH, BLENDED_NOISE)


@dataclass(frozen=True)
class TriggerSpec:
    """A watermark: mask/pattern/blend parameters plus the target label.

    ``mask`` is a binary patch indicator for the patch kinds and ``None``
    for the full-image noise kind; ``pattern`` is the patch content or the
    additive noise tensor.
    """

    kind: str
    target_label: int
    pattern: np.ndarray
    mask: np.ndarray | None = None
    blend_alpha: float = 0.2
    l2_budget: float | None = None
    patch_origin: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DomainError(f"unknown trigger kind {self.kind!r}")
        pattern = np.asarray(self.pattern, dtype=np.float64)
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "target_label", int(self.target_label))
        if not 0.0 <= float(self.blend_alpha) <= 1.0:
            raise DomainError(f"blend_alpha must lie in [0, 1], got {self.blend_alpha}")
        object.__setattr__(self, "blend_alpha", float(self.blend_alpha))
        if self.kind in (BADNETS_PATCH, BLENDED_PATCH):
            if self.mask is None:
                raise DomainError(f"{self.kind} requires a mask")
            mask = np.asarray(self.mask, dtype=np.float64)
            if mask.shape != pattern.shape:
                raise DomainError("mask and pattern shapes differ")
            if not np.isin(mask, (0.0, 1.0)).all():
                raise DomainError("patch masks must be binary")
            object.__setattr__(self, "mask", mask)
        else:
            if self.mask is not None:
                raise DomainError("noise triggers carry no mask")
        if self.patch_origin is not None:
            object.__setattr__(
                self, "patch_origin", tuple(int(v) for v in self.patch_origin)
            )

    @property
    def shape(self) -> tuple:
        return self.pattern.shape


def make_badnets_trigger(shape, target: int, stream: SeededStream,
                         patch_size: int = 3) -> TriggerSpec:
    """Random pixel patch at a random (then fixed) location, stamped opaquely."""
    mask, pattern, origin = _random_patch(shape, patch_size, stream)
    return TriggerSpec(BADNETS_PATCH, target, pattern, mask=mask, patch_origin=origin)


def make_blended_patch_trigger(shape, target: int, stream: SeededStream,
                               patch_size: int = 3,
                               blend_alpha: float = 0.2) -> TriggerSpec:
    """Random pixel patch alpha-blended into the image on its patch region."""
    mask, pattern, origin = _random_patch(shape, patch_size, stream)
    return TriggerSpec(BLENDED_PATCH, target, pattern, mask=mask,
                       blend_alpha=blend_alpha, patch_origin=origin)


def make_blended_noise_trigger(shape, target: int, stream: SeededStream,
                               l2_budget: float = 0.6) -> TriggerSpec:
    """Full-image random direction rescaled to exactly the l2 budget."""
    l2_budget = float(l2_budget)
    if l2_budget <= 0.0:
        raise DegenerateTriggerError(
            f"blended-noise trigger needs a positive l2 budget, got {l2_budget}"
        )
    gen = stream.generator()
    pattern = l2_rescale(gen.standard_normal(shape), l2_budget)
    return TriggerSpec(BLENDED_NOISE, target, pattern, l2_budget=l2_budget)


def _random_patch(shape, patch_size, stream):
    c, h, w = (int(s) for s in shape)
    patch_size = int(patch_size)
    if patch_size < 1 or patch_size > h or patch_size > w:
        raise DomainError(
            f"patch size {patch_size} does not fit image of shape {(c, h, w)}"
        )
    gen = stream.generator()
    row = int(gen.integers(0, h - patch_size + 1))
    col = int(gen.integers(0, w - patch_size + 1))
    mask = np.zeros((c, h, w))
    mask[:, row:row + patch_size, col:col + patch_size] = 1.0
    pattern = np.zeros((c, h, w))
    pattern[:, row:row + patch_size, col:col + patch_size] = gen.uniform(
        0.0, 1.0, (c, patch_size, patch_size)
    )
    return mask, pattern, (row, col)


def apply_trigger(x, trig: TriggerSpec, clip: bool = True) -> np.ndarray:
    """Embed the trigger into one image; clamped to [0, 1] unless clip=False."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != trig.shape:
        raise DomainError(
            f"sample shape {x.shape} does not match trigger shape {trig.shape}"
        )
    if trig.kind == BADNETS_PATCH:
        out = (1.0 - trig.mask) * x + trig.mask * trig.pattern
    elif trig.kind == BLENDED_PATCH:
        alpha = trig.blend_alpha
        out = x + trig.mask * alpha * (trig.pattern - x)
    else:
        out = x + trig.pattern
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


@dataclass(frozen=True)
class WatermarkedDataset:
    """A poisoned dataset plus the selection it was built from."""

    dataset: "LabeledDataset"  # noqa: F821 - toytrain's type, kept untangled
    poisoned_indices: np.ndarray
    trigger: TriggerSpec

    def __post_init__(self):
        idx = np.ascontiguousarray(self.poisoned_indices, dtype=np.int64)
        object.__setattr__(self, "poisoned_indices", idx)


def poison_dataset(data, trig: TriggerSpec, rate: float,
                   stream: SeededStream) -> WatermarkedDataset:
    """Replace a uniform floor(rate * N) subset by triggered, relabeled samples.

    Non-selected samples stay bit-identical; poisoned samples are written
    back clipped to [0, 1] in the dataset's dtype and relabeled to the
    trigger's target.
    """
    rate = float(rate)
    if not 0.0 < rate <= 1.0:
        raise DomainError(f"watermarking rate must lie in (0, 1], got {rate}")
    n = len(data)
    if n == 0:
        raise DomainError("cannot poison an empty dataset")
    n_poison = int(np.floor(rate * n))
    gen = stream.generator()
    chosen = np.sort(gen.choice(n, size=n_poison, replace=False)).astype(np.int64)
    tensors = data.tensors.copy()
    labels = data.labels.copy()
    for idx in chosen:
        tensors[idx] = apply_trigger(data.tensors[idx], trig, clip=True).astype(
            tensors.dtype
        )
        labels[idx] = trig.target_label
    poisoned = data.replace(tensors=tensors, labels=labels)
    return WatermarkedDataset(poisoned, chosen, trig)


def trigger_residual_norms(trig: TriggerSpec, samples,
                           clip: bool = True) -> np.ndarray:
    """Per-sample l2 norms of the actually applied residual."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 3:
        samples = samples[None]
    if samples.shape[0] == 0:
        raise DomainError("need at least one sample to measure residuals")
    return np.array([
        float(np.linalg.norm((apply_trigger(x, trig, clip=clip) - x).ravel()))
        for x in samples
    ])


def trigger_radius(trig: TriggerSpec, samples, clip: bool = True) -> float:
    """Max l2 norm of the actually applied residual over the given samples.

    With clipping on (the stored-dataset default) the residual is measured
    after the clamp, so saturation shrinks the radius, never inflates it.
    """
    return float(trigger_residual_norms(trig, samples, clip=clip).max())


def trigger_to_dict(trig: TriggerSpec) -> dict:
    return {
        "kind": trig.kind,
        "target_label": trig.target_label,
        "blend_alpha": trig.blend_alpha,
        "l2_budget": trig.l2_budget,
        "patch_origin": list(trig.patch_origin) if trig.patch_origin else None,
        "shape": list(trig.shape),
        "mask": trig.mask.ravel().tolist() if trig.mask is not None else None,
        "pattern": trig.pattern.ravel().tolist(),
    }


def trigger_from_dict(doc: dict) -> TriggerSpec:
    shape = tuple(doc["shape"])
    mask = doc.get("mask")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64).reshape(shape)
    return TriggerSpec(
        kind=doc["kind"],
        target_label=doc["target_label"],
        pattern=np.asarray(doc["pattern"], dtype=np.float64).reshape(shape),
        mask=mask,
        blend_alpha=doc.get("blend_alpha", 0.2),
        l2_budget=doc.get("l2_budget"),
        patch_origin=tuple(doc["patch_origin"]) if doc.get("patch_origin") else None,
    )


def save_trigger(path, trig: TriggerSpec) -> None:
    Path(path).write_text(json.dumps(trigger_to_dict(trig), indent=2) + "\n")


def load_trigger(path) -> TriggerSpec:
    try:
        return trigger_from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DomainError(f"malformed trigger file {path}: {exc}") from exc
