"""Sound output bounds for a network over an input box.

Two analyses are provided: plain interval propagation (``ibp_bounds``) and a
backward linear-relaxation pass (``crown_bounds``) that substitutes affine
under/over-estimators through each layer and concretizes them over the box.
The backward pass takes its intermediate pre-activation bounds from interval
propagation, which is cheaper than recursive refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Layer, Network, infer

# Interval arithmetic uses ordinary rounding; all soundness/width comparisons
# in tests and callers share this one slack constant.
NUMERIC_TOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned input region: one finite [lo, hi] interval per feature."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be equal-length vectors")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("box bounds must be finite")
        if (lo > hi).any():
            raise ValueError("box with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @staticmethod
    def point(x) -> "Box":
        x = np.asarray(x, dtype=np.float64)
        return Box(x.copy(), x.copy())


@dataclass(frozen=True)
class OutputBounds:
    lower: np.ndarray
    upper: np.ndarray

    def width(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True)
class LinearBounds:
    """Affine under/over-estimators of each output in the input variables:
    lower_coeffs . x + lower_const <= f(x) <= upper_coeffs . x + upper_const
    for every x in the box they were derived over.
    """

    lower_coeffs: np.ndarray
    lower_const: np.ndarray
    upper_coeffs: np.ndarray
    upper_const: np.ndarray

    def concretize(self, box: Box) -> OutputBounds:
        mid = (box.lo + box.hi) / 2.0
        rad = (box.hi - box.lo) / 2.0
        lower = self.lower_coeffs @ mid - np.abs(self.lower_coeffs) @ rad + self.lower_const
        upper = self.upper_coeffs @ mid + np.abs(self.upper_coeffs) @ rad + self.upper_const
        return OutputBounds(lower=lower, upper=upper)


def _check_dim(network: Network, box: Box) -> None:
    if box.dim != network.input_dim:
        raise ValueError(
            f"box dimension {box.dim} does not match input_dim {network.input_dim}"
        )


def _affine_interval(layer: Layer, lo: np.ndarray, hi: np.ndarray):
    mid = (lo + hi) / 2.0
    rad = (hi - lo) / 2.0
    center = layer.weights @ mid + layer.bias
    dev = np.abs(layer.weights) @ rad
    return center - dev, center + dev


def ibp_bounds(network: Network, box: Box) -> OutputBounds:
    """Interval propagation: affine layers via midpoint/radius arithmetic,
    relu as [max(lo, 0), max(hi, 0)]."""
    _check_dim(network, box)
    lo, hi = box.lo, box.hi
    for layer in network.layers:
        if layer.kind == "dense":
            lo, hi = _affine_interval(layer, lo, hi)
        else:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return OutputBounds(lower=lo, upper=hi)


def _relu_pre_bounds(network: Network, box: Box) -> list[tuple[np.ndarray, np.ndarray] | None]:
    """Interval bounds on the input of each layer; entries for dense layers
    are None (only relu layers need their pre-activation interval)."""
    out: list[tuple[np.ndarray, np.ndarray] | None] = []
    lo, hi = box.lo, box.hi
    for layer in network.layers:
        out.append((lo, hi) if layer.kind == "relu" else None)
        if layer.kind == "dense":
            lo, hi = _affine_interval(layer, lo, hi)
        else:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return out


def _relu_relaxation(lo: np.ndarray, hi: np.ndarray):
    """Per-unit linear relaxation of relu over pre-activation [lo, hi].

    Stable units pass through exactly (slope 1 or 0). Unstable units get the
    upper chord of slope hi/(hi-lo) and a zero-intercept lower line whose
    slope is 1 when hi >= |lo| and 0 otherwise.
    """
    up_slope = np.zeros_like(lo)
    up_icpt = np.zeros_like(lo)
    low_slope = np.zeros_like(lo)

    active = lo >= 0.0
    up_slope[active] = 1.0
    low_slope[active] = 1.0
    # inactive (hi <= 0) keeps all-zero slopes/intercepts
    unstable = (~active) & (hi > 0.0)
    l_u, h_u = lo[unstable], hi[unstable]
    chord = h_u / (h_u - l_u)
    up_slope[unstable] = chord
    up_icpt[unstable] = -l_u * chord
    low_slope[unstable] = (h_u >= -l_u).astype(np.float64)
    return up_slope, up_icpt, low_slope


def _backward_linear(
    layers: Sequence[Layer],
    pre_bounds: Sequence[tuple[np.ndarray, np.ndarray] | None],
    spec_rows: np.ndarray,
) -> LinearBounds:
    """Propagate the rows of ``spec_rows`` (an s x out matrix over the final
    layer's outputs) backward to the input, producing input-space affine
    under/over-estimators for each row."""
    l_a = spec_rows.astype(np.float64, copy=True)
    u_a = spec_rows.astype(np.float64, copy=True)
    l_c = np.zeros(spec_rows.shape[0])
    u_c = np.zeros(spec_rows.shape[0])
    for layer, pre in zip(reversed(layers), reversed(list(pre_bounds))):
        if layer.kind == "dense":
            l_c = l_c + l_a @ layer.bias
            u_c = u_c + u_a @ layer.bias
            l_a = l_a @ layer.weights
            u_a = u_a @ layer.weights
        else:
            lo, hi = pre
            up_slope, up_icpt, low_slope = _relu_relaxation(lo, hi)
            u_pos, u_neg = np.maximum(u_a, 0.0), np.minimum(u_a, 0.0)
            l_pos, l_neg = np.maximum(l_a, 0.0), np.minimum(l_a, 0.0)
            u_c = u_c + u_pos @ up_icpt  # lower line has zero intercept
            l_c = l_c + l_neg @ up_icpt
            u_a = u_pos * up_slope + u_neg * low_slope
            l_a = l_pos * low_slope + l_neg * up_slope
    return LinearBounds(lower_coeffs=l_a, lower_const=l_c, upper_coeffs=u_a, upper_const=u_c)


def crown_linear_bounds(
    network: Network, box: Box, spec_rows: np.ndarray | None = None
) -> LinearBounds:
    """Backward pass producing input-space affine bounds for each output (or
    for each row of ``spec_rows`` over the outputs, when given)."""
    _check_dim(network, box)
    pre = _relu_pre_bounds(network, box)
    if spec_rows is None:
        spec_rows = np.eye(network.num_classes)
    return _backward_linear(network.layers, pre, spec_rows)


def crown_bounds(network: Network, box: Box) -> OutputBounds:
    """Backward linear-relaxation bounds, concretized over the box."""
    return crown_linear_bounds(network, box).concretize(box)


def perturbation_box(
    network: Network,
    x: np.ndarray,
    free: Sequence[int],
    epsilon: float,
) -> Box:
    """Box with each free feature i widened to [x_i - eps, x_i + eps],
    intersected with the network's global input bounds when present; all
    other features pinned to their exact value.

    ``free`` holds 1-based feature indices.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = x.copy()
    hi = x.copy()
    for i in free:
        if not 1 <= i <= network.input_dim:
            raise IndexError(f"feature index {i} out of range 1..{network.input_dim}")
        k = i - 1
        a, b = x[k] - epsilon, x[k] + epsilon
        if network.input_bounds is not None:
            a = max(a, network.input_bounds[k, 0])
            b = min(b, network.input_bounds[k, 1])
        if a > b:
            raise ValueError(
                f"feature {i}: value {x[k]} lies outside the network input bounds"
            )
        lo[k], hi[k] = a, b
    return Box(lo, hi)


def epsilon_lower_bound(
    network: Network,
    x: np.ndarray,
    i: int,
    epsilon: float,
    method: str = "crown",
) -> float:
    """Certified lower bound of the predicted class's logit when feature i
    alone ranges over [x_i - eps, x_i + eps] (clamped to the input bounds)
    and every other feature stays fixed."""
    box = perturbation_box(network, x, [i], epsilon)
    c = infer(network, x).predicted
    if method == "ibp":
        return float(ibp_bounds(network, box).lower[c])
    if method == "crown":
        row = np.zeros((1, network.num_classes))
        row[0, c] = 1.0
        lin = crown_linear_bounds(network, box, spec_rows=row)
        return float(lin.concretize(box).lower[0])
    raise ValueError(f"unknown bound method {method!r}")
