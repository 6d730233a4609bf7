"""Black-box classifier handles and their JSON model format.

Three concrete kinds cover the roles the verification pipeline needs:

* :class:`LinearClassifier` — analytic oracle model (smoothed behaviour has
  a closed form under Gaussian noise);
* :class:`TableClassifier` — inputs keyed by a quantization grid, so
  exhaustive enumeration over a discretized cube is exact;
* :class:`MLPClassifier` — one-hidden-layer relu network, the trainable toy
  stand-in for real suspicious models.

Handles are immutable after construction and safe to evaluate from many
workers. Only hard-label ``predict`` (plus raw ``logits`` for gradients and
tie inspection) is exposed; nothing assumes calibrated probabilities.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .backend import kernels
from .errors import DomainError, UnsupportedOperationError
from .numerics import argmax_first

KIND_LINEAR = "linear"
KIND_TABLE = "table"
KIND_MLP = "mlp"


class Classifier:
    """Common surface: deterministic predict/logits over C,H,W tensors."""

    kind: str = "abstract"

    def __init__(self, num_classes, input_shape, model_id=None):
        num_classes = int(num_classes)
        if num_classes < 2:
            raise DomainError(f"need at least 2 classes, got {num_classes}")
        input_shape = tuple(int(s) for s in input_shape)
        if len(input_shape) != 3 or any(s < 1 for s in input_shape):
            raise DomainError(f"input_shape must be (C, H, W), got {input_shape}")
        self.num_classes = num_classes
        self.input_shape = input_shape
        self.model_id = model_id

    @property
    def input_dim(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    def _flat(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise DomainError(
                f"input shape {x.shape} does not match classifier shape {self.input_shape}"
            )
        return x.reshape(-1)

    def _flat_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 4 or xs.shape[1:] != self.input_shape:
            raise DomainError(
                f"batch shape {xs.shape} does not match (n,) + {self.input_shape}"
            )
        return np.ascontiguousarray(xs.reshape(xs.shape[0], -1))

    def logits(self, x) -> np.ndarray:
        raise NotImplementedError

    def logits_batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        return np.stack([self.logits(row) for row in xs])

    def predict(self, x) -> int:
        return argmax_first(self.logits(x))

    def predict_batch(self, xs) -> np.ndarray:
        return np.argmax(self.logits_batch(xs), axis=1)

    def label_counts(self, flat_batch) -> np.ndarray:
        """Prediction frequencies over an already-flattened (m, d) batch."""
        logits = np.stack(
            [self.logits(row.reshape(self.input_shape)) for row in flat_batch]
        )
        labels = np.argmax(logits, axis=1)
        return np.bincount(labels, minlength=self.num_classes).astype(np.int64)


class LinearClassifier(Classifier):
    """Affine scores ``weight @ x + bias`` over the flattened input."""

    kind = KIND_LINEAR

    def __init__(self, weight, bias, input_shape, model_id=None):
        weight = np.ascontiguousarray(weight, dtype=np.float64)
        bias = np.ascontiguousarray(bias, dtype=np.float64)
        super().__init__(weight.shape[0], input_shape, model_id)
        if weight.ndim != 2 or weight.shape[1] != self.input_dim:
            raise DomainError(
                f"weight shape {weight.shape} inconsistent with input dim {self.input_dim}"
            )
        if bias.shape != (self.num_classes,):
            raise DomainError(f"bias shape {bias.shape} != ({self.num_classes},)")
        if not (np.isfinite(weight).all() and np.isfinite(bias).all()):
            raise DomainError("linear parameters must be finite")
        self.weight = weight
        self.bias = bias
        self._wt = np.ascontiguousarray(weight.T)

    def logits(self, x):
        return self.weight @ self._flat(x) + self.bias

    def logits_batch(self, xs):
        return self._flat_batch(xs) @ self._wt + self.bias

    def predict_batch(self, xs):
        return np.argmax(self.logits_batch(xs), axis=1)

    def label_counts(self, flat_batch):
        return kernels().linear_counts(flat_batch, self._wt, self.bias)


class MLPClassifier(Classifier):
    """One hidden relu layer: ``out_w @ relu(hid_w @ x + hid_b) + out_b``."""

    kind = KIND_MLP

    def __init__(self, hidden_weight, hidden_bias, output_weight, output_bias,
                 input_shape, model_id=None):
        hidden_weight = np.ascontiguousarray(hidden_weight, dtype=np.float64)
        hidden_bias = np.ascontiguousarray(hidden_bias, dtype=np.float64)
        output_weight = np.ascontiguousarray(output_weight, dtype=np.float64)
        output_bias = np.ascontiguousarray(output_bias, dtype=np.float64)
        super().__init__(output_weight.shape[0], input_shape, model_id)
        h = hidden_weight.shape[0]
        if hidden_weight.ndim != 2 or hidden_weight.shape[1] != self.input_dim:
            raise DomainError(
                f"hidden weight shape {hidden_weight.shape} inconsistent with "
                f"input dim {self.input_dim}"
            )
        if hidden_bias.shape != (h,) or output_weight.shape != (self.num_classes, h) \
                or output_bias.shape != (self.num_classes,):
            raise DomainError("MLP parameter shapes are inconsistent")
        for arr in (hidden_weight, hidden_bias, output_weight, output_bias):
            if not np.isfinite(arr).all():
                raise DomainError("MLP parameters must be finite")
        self.hidden_weight = hidden_weight
        self.hidden_bias = hidden_bias
        self.output_weight = output_weight
        self.output_bias = output_bias
        self._w1t = np.ascontiguousarray(hidden_weight.T)
        self._w2t = np.ascontiguousarray(output_weight.T)

    @property
    def hidden_dim(self) -> int:
        return self.hidden_weight.shape[0]

    def logits(self, x):
        a1 = np.maximum(self.hidden_weight @ self._flat(x) + self.hidden_bias, 0.0)
        return self.output_weight @ a1 + self.output_bias

    def logits_batch(self, xs):
        a1 = np.maximum(self._flat_batch(xs) @ self._w1t + self.hidden_bias, 0.0)
        return a1 @ self._w2t + self.output_bias

    def predict_batch(self, xs):
        return np.argmax(self.logits_batch(xs), axis=1)

    def label_counts(self, flat_batch):
        return kernels().mlp_counts(
            flat_batch, self._w1t, self.hidden_bias, self._w2t, self.output_bias
        )

    def input_gradient(self, x, y) -> np.ndarray:
        """Gradient of softmax cross-entropy at (x, y) w.r.t. the input."""
        y = int(y)
        if not 0 <= y < self.num_classes:
            raise DomainError(f"label {y} out of range for {self.num_classes} classes")
        flat = self._flat(x)
        z1 = self.hidden_weight @ flat + self.hidden_bias
        a1 = np.maximum(z1, 0.0)
        z2 = self.output_weight @ a1 + self.output_bias
        z2 = z2 - z2.max()
        p = np.exp(z2)
        p /= p.sum()
        p[y] -= 1.0
        da1 = self.output_weight.T @ p
        da1[z1 <= 0.0] = 0.0
        grad = self.hidden_weight.T @ da1
        return grad.reshape(self.input_shape)


class TableClassifier(Classifier):
    """Lookup model keyed by a quantization grid over the input cube.

    A cell is ``floor(x / cell_size)`` per coordinate; unmapped cells fall
    back to ``default_label``. Logits are the one-hot indicator of the
    looked-up label.
    """

    kind = KIND_TABLE

    def __init__(self, cell_size, table, default_label, num_classes, input_shape,
                 model_id=None):
        super().__init__(num_classes, input_shape, model_id)
        cell_size = float(cell_size)
        if cell_size <= 0.0:
            raise DomainError(f"cell_size must be positive, got {cell_size}")
        default_label = int(default_label)
        if not 0 <= default_label < self.num_classes:
            raise DomainError(f"default_label {default_label} out of range")
        clean = {}
        for cell, label in table.items():
            cell = tuple(int(c) for c in cell)
            if len(cell) != self.input_dim:
                raise DomainError(
                    f"table cell of length {len(cell)} does not match input dim "
                    f"{self.input_dim}"
                )
            label = int(label)
            if not 0 <= label < self.num_classes:
                raise DomainError(f"table label {label} out of range")
            clean[cell] = label
        self.cell_size = cell_size
        self.table = clean
        self.default_label = default_label

    def _cell(self, flat) -> tuple:
        return tuple(int(v) for v in np.floor(flat / self.cell_size).astype(np.int64))

    def lookup(self, x) -> int:
        return self.table.get(self._cell(self._flat(x)), self.default_label)

    def logits(self, x):
        out = np.zeros(self.num_classes)
        out[self.lookup(x)] = 1.0
        return out

    def predict(self, x):
        return self.lookup(x)

    def predict_batch(self, xs):
        flat = self._flat_batch(xs)
        cells = np.floor(flat / self.cell_size).astype(np.int64)
        return np.array(
            [self.table.get(tuple(int(v) for v in row), self.default_label)
             for row in cells],
            dtype=np.int64,
        )

    def label_counts(self, flat_batch):
        cells = np.floor(flat_batch / self.cell_size).astype(np.int64)
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for row in cells:
            counts[self.table.get(tuple(int(v) for v in row), self.default_label)] += 1
        return counts


def predict(handle: Classifier, x) -> int:
    """Hard label for one input; equals ``argmax_first(logits(handle, x))``."""
    return handle.predict(x)


def logits(handle: Classifier, x) -> np.ndarray:
    """Deterministic forward pass; table handles return a one-hot indicator."""
    return handle.logits(x)


def input_gradient(handle: Classifier, x, y) -> np.ndarray:
    """Input-space cross-entropy gradient; defined for MLP handles only."""
    if not isinstance(handle, MLPClassifier):
        raise UnsupportedOperationError(
            f"input_gradient requires an MLP handle, got kind {handle.kind!r}"
        )
    return handle.input_gradient(x, y)


def _array_entry(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"name": name, "shape": list(arr.shape), "data": arr.ravel().tolist()}


def _entry_array(entry):
    return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])


def model_to_dict(clf: Classifier) -> dict:
    if isinstance(clf, LinearClassifier):
        params = [_array_entry("weight", clf.weight), _array_entry("bias", clf.bias)]
    elif isinstance(clf, MLPClassifier):
        params = [
            _array_entry("hidden_weight", clf.hidden_weight),
            _array_entry("hidden_bias", clf.hidden_bias),
            _array_entry("output_weight", clf.output_weight),
            _array_entry("output_bias", clf.output_bias),
        ]
    elif isinstance(clf, TableClassifier):
        cells = sorted(clf.table)
        labels = [clf.table[c] for c in cells]
        params = [
            _array_entry("cell_size", np.array(clf.cell_size)),
            _array_entry("default_label", np.array(float(clf.default_label))),
            _array_entry("cells", np.array(cells, dtype=np.float64).reshape(
                len(cells), clf.input_dim)),
            _array_entry("labels", np.array(labels, dtype=np.float64)),
        ]
    else:
        raise DomainError(f"cannot serialize classifier kind {clf.kind!r}")
    return {
        "kind": clf.kind,
        "num_classes": clf.num_classes,
        "input_shape": list(clf.input_shape),
        "parameters": params,
    }


def model_from_dict(doc: dict, model_id=None) -> Classifier:
    kind = doc["kind"]
    shape = tuple(doc["input_shape"])
    params = {entry["name"]: entry for entry in doc["parameters"]}
    if kind == KIND_LINEAR:
        return LinearClassifier(
            _entry_array(params["weight"]), _entry_array(params["bias"]),
            shape, model_id=model_id,
        )
    if kind == KIND_MLP:
        return MLPClassifier(
            _entry_array(params["hidden_weight"]), _entry_array(params["hidden_bias"]),
            _entry_array(params["output_weight"]), _entry_array(params["output_bias"]),
            shape, model_id=model_id,
        )
    if kind == KIND_TABLE:
        cells = _entry_array(params["cells"])
        labels = _entry_array(params["labels"])
        if cells.size == 0:
            cells = cells.reshape(0, int(math.prod(shape)))
        table = {
            tuple(int(v) for v in cell): int(label)
            for cell, label in zip(cells, labels)
        }
        return TableClassifier(
            float(_entry_array(params["cell_size"])),
            table,
            int(float(_entry_array(params["default_label"]))),
            doc["num_classes"], shape, model_id=model_id,
        )
    raise DomainError(f"unknown classifier kind {kind!r}")


def save_model(path, clf: Classifier) -> None:
    """Write the single-document JSON model file (full float64 precision)."""
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(clf), indent=2) + "\n")


def load_model(path) -> Classifier:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return model_from_dict(doc, model_id=str(path))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DomainError(f"malformed model file {path}: {exc}") from exc
