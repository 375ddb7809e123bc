"""Feed-forward ReLU classifiers: in-memory representation, exact inference,
and the on-disk JSON model / CSV dataset formats.

Feature indices are 1-based throughout the public API (features are named
1..m); class indices are 0-based positions into the label list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np


class ModelError(ValueError):
    """Malformed model document or violated network invariant."""


class DatasetError(ValueError):
    """Malformed dataset row."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Layer:
    """One network layer: an affine map (``dense``) or elementwise ``relu``.

    Dense weights have shape (out, in); row i produces output unit i.
    ReLU layers carry no parameters.
    """

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "relu":
            if self.weights is not None or self.bias is not None:
                raise ModelError("relu layer carries no parameters")
            return
        if self.kind != "dense":
            raise ModelError(f"unknown layer kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise ModelError("dense weights must be a rectangular matrix")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ModelError("bias length must match weight row count")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ModelError("non-finite parameter in dense layer")
        object.__setattr__(self, "weights", _as_readonly(w))
        object.__setattr__(self, "bias", _as_readonly(b))

    @staticmethod
    def dense(weights, bias) -> "Layer":
        return Layer("dense", np.asarray(weights), np.asarray(bias))

    @staticmethod
    def relu() -> "Layer":
        return Layer("relu")


@dataclass(frozen=True)
class Network:
    """A layered dense/ReLU classifier.

    ``input_dim`` is m, ``labels`` the class names (length n), and
    ``input_bounds`` an optional global valid range per input feature.
    """

    name: str
    input_dim: int
    labels: tuple[str, ...]
    layers: tuple[Layer, ...]
    input_bounds: np.ndarray | None = None  # shape (m, 2), lo <= hi

    def __post_init__(self):
        if self.input_dim < 1:
            raise ModelError("input_dim must be a positive integer")
        labels = tuple(str(s) for s in self.labels)
        if len(labels) < 1:
            raise ModelError("at least one label required")
        object.__setattr__(self, "labels", labels)
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        width = self.input_dim
        for idx, layer in enumerate(layers):
            if layer.kind == "dense":
                if layer.weights.shape[1] != width:
                    raise ModelError(
                        f"layer {idx}: expects input width {layer.weights.shape[1]}, "
                        f"got {width}"
                    )
                width = layer.weights.shape[0]
        if width != len(labels):
            raise ModelError(
                f"final layer width {width} does not match {len(labels)} labels"
            )
        if self.input_bounds is not None:
            bounds = np.asarray(self.input_bounds, dtype=np.float64)
            if bounds.shape != (self.input_dim, 2):
                raise ModelError("input_bounds must hold one [lo, hi] pair per feature")
            if not np.isfinite(bounds).all():
                raise ModelError("non-finite input bound")
            if (bounds[:, 0] > bounds[:, 1]).any():
                raise ModelError("input bound with lo > hi")
            object.__setattr__(self, "input_bounds", _as_readonly(bounds))

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def feature_indices(self) -> range:
        """All feature indices, 1..m."""
        return range(1, self.input_dim + 1)


@dataclass(frozen=True)
class Logits:
    """Raw output vector with the predicted class (argmax, lowest index wins)."""

    values: np.ndarray
    predicted: int


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if not np.isfinite(feats).all():
            raise DatasetError("non-finite feature value")
        object.__setattr__(self, "features", _as_readonly(feats))
        if self.label is not None and self.label < 0:
            raise DatasetError("label must be non-negative")


def infer(network: Network, x: Sequence[float] | np.ndarray) -> Logits:
    """Run the network on one input vector.

    Dense layers apply Wx + b, relu layers elementwise max(., 0). The
    predicted class is the argmax with ties broken by the lowest index.
    """
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (network.input_dim,):
        raise ModelError(
            f"input has shape {v.shape}, expected ({network.input_dim},)"
        )
    if not np.isfinite(v).all():
        raise ModelError("non-finite input")
    for layer in network.layers:
        if layer.kind == "dense":
            v = layer.weights @ v + layer.bias
        else:
            v = np.maximum(v, 0.0)
    v.flags.writeable = False
    # np.argmax already returns the first maximal index
    return Logits(values=v, predicted=int(np.argmax(v)))


# ---------------------------------------------------------------------------
# JSON model format


def network_to_dict(network: Network) -> dict:
    doc: dict = {
        "name": network.name,
        "input_dim": network.input_dim,
        "labels": list(network.labels),
    }
    if network.input_bounds is not None:
        doc["input_bounds"] = [[lo, hi] for lo, hi in network.input_bounds]
    layers = []
    for layer in network.layers:
        if layer.kind == "dense":
            layers.append(
                {
                    "type": "dense",
                    "weights": [list(row) for row in layer.weights],
                    "bias": list(layer.bias),
                }
            )
        else:
            layers.append({"type": "relu"})
    doc["layers"] = layers
    return doc


def network_from_dict(doc: dict) -> Network:
    try:
        name = doc["name"]
        input_dim = doc["input_dim"]
        labels = doc["labels"]
        raw_layers = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise ModelError(f"missing or malformed field: {exc}") from exc
    if not isinstance(input_dim, int) or isinstance(input_dim, bool):
        raise ModelError("input_dim must be an integer")
    if not isinstance(raw_layers, list):
        raise ModelError("layers must be an array")
    layers = []
    for idx, entry in enumerate(raw_layers):
        if not isinstance(entry, dict) or "type" not in entry:
            raise ModelError(f"layer {idx}: expected an object with a 'type'")
        kind = entry["type"]
        if kind == "dense":
            if "weights" not in entry or "bias" not in entry:
                raise ModelError(f"layer {idx}: dense layer needs weights and bias")
            try:
                layers.append(Layer.dense(entry["weights"], entry["bias"]))
            except (ModelError, ValueError) as exc:
                raise ModelError(f"layer {idx}: {exc}") from exc
        elif kind == "relu":
            layers.append(Layer.relu())
        else:
            raise ModelError(f"layer {idx}: unknown type {kind!r}")
    return Network(
        name=str(name),
        input_dim=input_dim,
        labels=tuple(labels),
        layers=tuple(layers),
        input_bounds=doc.get("input_bounds"),
    )


def load_model(source: IO | bytes | str) -> Network:
    """Parse the JSON model format from a stream, bytes, or JSON text."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = source
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed model document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError("model document must be a JSON object")
    return network_from_dict(doc)


def save_model(network: Network, sink: IO[str]) -> None:
    """Write the JSON model format; round-trips exactly for finite doubles."""
    json.dump(network_to_dict(network), sink)


def load_model_file(path: str) -> Network:
    with open(path, "rb") as fh:
        return load_model(fh)


def save_model_file(network: Network, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        save_model(network, fh)


# ---------------------------------------------------------------------------
# CSV dataset format: headerless, m feature values then an optional int label


def load_dataset(source: IO | bytes | str, m: int) -> list[Sample]:
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = source
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    samples: list[Sample] = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) not in (m, m + 1):
            raise DatasetError(
                f"row {lineno}: expected {m} features plus optional label, "
                f"got {len(fields)} fields"
            )
        try:
            features = [float(f) for f in fields[:m]]
        except ValueError as exc:
            raise DatasetError(f"row {lineno}: unparsable numeric field: {exc}") from exc
        label: int | None = None
        if len(fields) == m + 1:
            try:
                label = int(fields[m])
            except ValueError as exc:
                raise DatasetError(
                    f"row {lineno}: label must be an integer: {exc}"
                ) from exc
        samples.append(Sample(features=np.array(features), label=label))
    return samples


def load_dataset_file(path: str, m: int) -> list[Sample]:
    with open(path, "rb") as fh:
        return load_dataset(fh, m)
