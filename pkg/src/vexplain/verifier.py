"""Prediction-invariance queries decided by branch-and-bound over the input box.

``solve`` searches a perturbation box for a point where a challenger class
overtakes the predicted class, pruning subboxes whose bounded objective cannot
reach zero. It is complete up to a box-width tolerance: queries that would
need narrower boxes (or more nodes than budgeted) come back UNKNOWN.

``check_valid`` is the validity oracle used by the explanation drivers: a
feature subset is valid (irrelevant) when every challenger class is UNSAT.
Challengers are tried from the most to the least confident, so failing
queries tend to fail on the first solve call. UNKNOWN is treated as failure,
which can only enlarge explanations, never unsound ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import Box, _backward_linear, perturbation_box
from .model import Layer, Logits, Network, infer

UNSAT = "UNSAT"
SAT = "SAT"
UNKNOWN = "UNKNOWN"

_DESCENT_SWEEPS = 20


@dataclass(frozen=True)
class PerturbationSpec:
    """Perturbation magnitude and verifier budget.

    ``delta`` is the allowed output discrepancy for single-output (regression)
    networks and is unused for classification. ``min_box_width`` defaults to
    1e-4 * epsilon; boxes narrower than this are not split further.
    """

    epsilon: float
    norm: str = "linf"
    delta: float = 0.0
    min_box_width: float | None = None
    max_nodes: int = 100_000

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.norm != "linf":
            raise ValueError("only the linf norm is supported")
        if self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        if self.min_box_width is None:
            object.__setattr__(
                self, "min_box_width", max(1e-4 * self.epsilon, 1e-12)
            )
        elif self.min_box_width <= 0:
            raise ValueError("min_box_width must be positive")


@dataclass(frozen=True)
class Query:
    """One counterexample search: can class j overtake class c somewhere in
    the box spanned by the free features around ``base``?"""

    network: Network
    base: np.ndarray
    free: frozenset[int]
    target_pair: tuple[int, int]  # (c, j), c = predicted class of base

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=np.float64))
        object.__setattr__(self, "free", frozenset(self.free))
        c, j = self.target_pair
        if c == j:
            raise ValueError("target pair must name two distinct classes")
        n = self.network.num_classes
        if not (0 <= c < n and 0 <= j < n):
            raise ValueError("target class out of range")
        for i in self.free:
            if not 1 <= i <= self.network.input_dim:
                raise IndexError(f"feature index {i} out of range")


@dataclass(frozen=True)
class Outcome:
    verdict: str
    witness: np.ndarray | None
    nodes_expanded: int


@dataclass
class OracleStats:
    """Counters for one explanation run; monotonically non-decreasing."""

    solve_calls: int = 0
    checkvalid_calls: int = 0
    unknown_solves: int = 0
    per_class: dict[int, int] = field(default_factory=dict)

    def record_solve(self, target_class: int, verdict: str) -> None:
        self.solve_calls += 1
        self.per_class[target_class] = self.per_class.get(target_class, 0) + 1
        if verdict == UNKNOWN:
            self.unknown_solves += 1


def confidence_ranking(logits: Logits) -> list[int]:
    """Challenger classes ordered from the most to the least confident;
    ties broken by ascending class index. The predicted class is excluded."""
    y = logits.values
    order = sorted(range(len(y)), key=lambda k: (-y[k], k))
    return [k for k in order if k != logits.predicted]


# ---------------------------------------------------------------------------
# Objective networks: single-output g with "counterexample" meaning g > 0


def class_difference_network(network: Network, c: int, j: int) -> Network:
    """Single-output network computing y_j - y_c."""
    last = network.layers[-1]
    if last.kind == "dense":
        w = (last.weights[j] - last.weights[c]).reshape(1, -1)
        b = np.array([last.bias[j] - last.bias[c]])
        layers = network.layers[:-1] + (Layer.dense(w, b),)
    else:
        row = np.zeros((1, network.num_classes))
        row[0, j], row[0, c] = 1.0, -1.0
        layers = network.layers + (Layer.dense(row, np.zeros(1)),)
    return Network(
        name=f"{network.name}:diff",
        input_dim=network.input_dim,
        labels=("objective",),
        layers=layers,
        input_bounds=network.input_bounds,
    )


def _shifted_output_network(network: Network, scale: float, shift: float) -> Network:
    """Single-output network computing scale * f(x) + shift."""
    last = network.layers[-1]
    if last.kind == "dense":
        w = scale * last.weights
        b = scale * last.bias + shift
        layers = network.layers[:-1] + (Layer.dense(w, b),)
    else:
        layers = network.layers + (
            Layer.dense(np.array([[scale]]), np.array([shift])),
        )
    return Network(
        name=f"{network.name}:shifted",
        input_dim=network.input_dim,
        labels=("objective",),
        layers=layers,
        input_bounds=network.input_bounds,
    )


def _forward_batch(layers: Sequence[Layer], points: np.ndarray) -> np.ndarray:
    v = points
    for layer in layers:
        if layer.kind == "dense":
            v = v @ layer.weights.T + layer.bias
        else:
            v = np.maximum(v, 0.0)
    return v


# ---------------------------------------------------------------------------
# Branch and bound


def _node_upper_bound(objective: Network, box: Box) -> tuple[float, np.ndarray | None]:
    """Sound upper bound on the objective over the box: the tighter of the
    interval bound and the backward linear-relaxation bound (which reuses the
    interval pass's pre-activation bounds).

    Also returns the box corner maximizing the relaxation's affine *lower*
    estimator: the objective there is at least the estimator's maximum, which
    makes it the best witness candidate the relaxation can point at.
    """
    pre: list[tuple[np.ndarray, np.ndarray] | None] = []
    lo, hi = box.lo, box.hi
    for layer in objective.layers:
        if layer.kind == "dense":
            pre.append(None)
            mid = (lo + hi) / 2.0
            rad = (hi - lo) / 2.0
            center = layer.weights @ mid + layer.bias
            dev = np.abs(layer.weights) @ rad
            lo, hi = center - dev, center + dev
        else:
            pre.append((lo, hi))
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    ibp_up = float(hi[0])
    if ibp_up <= 0.0:
        return ibp_up, None
    lin = _backward_linear(objective.layers, pre, np.ones((1, 1)))
    crown_up = float(lin.concretize(box).upper[0])
    guided = np.where(lin.lower_coeffs[0] > 0, box.hi, box.lo)
    return min(ibp_up, crown_up), guided


def _probe_points(box: Box, free_cols: np.ndarray, guided: np.ndarray | None) -> np.ndarray:
    """Deterministic probe set: box center, the two extreme corners, the
    relaxation-guided corner, and the per-coordinate extremes of the (up to
    two) widest free coordinates."""
    center = (box.lo + box.hi) / 2.0
    pts = [center, box.lo, box.hi]
    if guided is not None:
        pts.append(guided)
    if free_cols.size:
        widths = box.hi[free_cols] - box.lo[free_cols]
        order = np.argsort(-widths, kind="stable")
        for k in order[:2]:
            col = free_cols[k]
            for v in (box.lo[col], box.hi[col]):
                p = center.copy()
                p[col] = v
                pts.append(p)
    return np.array(pts)


def _coordinate_descent(
    objective: Network, box: Box, free_cols: np.ndarray, start: np.ndarray, start_val: float
) -> tuple[np.ndarray, float]:
    """Maximize the objective by coordinate moves. Each sweep evaluates the
    lo/mid/hi candidates of every free coordinate around the current point
    in one batch, then takes the best single-coordinate move (also trying
    all improving moves combined). Stops after a sweep with no improvement
    or after the sweep cap."""
    point = start.copy()
    best = start_val
    k = free_cols.size
    lo = box.lo[free_cols]
    hi = box.hi[free_cols]
    mid = (lo + hi) / 2.0
    rows = np.arange(k)
    for _ in range(_DESCENT_SWEEPS):
        cand = np.tile(point, (3 * k + 1, 1))
        cand[rows, free_cols] = lo
        cand[k + rows, free_cols] = mid
        cand[2 * k + rows, free_cols] = hi
        vals = _forward_batch(objective.layers, cand[:-1], )[:, 0]
        per_coord = vals.reshape(3, k)
        choice = np.argmax(per_coord, axis=0)
        gains = per_coord[choice, rows]
        combined = point.copy()
        better = gains > best
        combined[free_cols[better]] = np.select(
            [choice[better] == 0, choice[better] == 1], [lo[better], mid[better]], hi[better]
        )
        combined_val = float(_forward_batch(objective.layers, combined[None, :])[0, 0])
        top = int(np.argmax(gains))
        stepped_val = float(gains[top])
        if max(stepped_val, combined_val) <= best:
            break
        if combined_val >= stepped_val:
            point, best = combined, combined_val
        else:
            values = (lo, mid, hi)[int(choice[top])]
            point = point.copy()
            point[free_cols[top]] = values[top]
            best = stepped_val
    return point, best


def _search_positive(
    objective: Network,
    box: Box,
    free_cols: np.ndarray,
    spec: PerturbationSpec,
    confirm,
) -> Outcome:
    """Find a point in the box where the single-output objective is positive
    (and ``confirm`` accepts it), or prove there is none.

    Nodes come off a LIFO stack; the widest free coordinate is bisected at
    its midpoint. Nodes narrower than ``spec.min_box_width`` are left
    undecided, which (like running out of node budget) yields UNKNOWN.
    """
    stack = [box]
    nodes = 0
    undecided = False
    while stack and nodes < spec.max_nodes:
        node = stack.pop()
        nodes += 1
        upper, guided = _node_upper_bound(objective, node)
        if upper <= 0.0:
            continue
        probes = _probe_points(node, free_cols, guided)
        vals = _forward_batch(objective.layers, probes)[:, 0]
        witness = None
        for k in range(len(probes)):
            if vals[k] > 0.0 and confirm(probes[k]):
                witness = probes[k]
                break
        if witness is None and free_cols.size:
            k = int(np.argmax(vals))
            point, val = _coordinate_descent(
                objective, node, free_cols, probes[k], float(vals[k])
            )
            if val > 0.0 and confirm(point):
                witness = point
        if witness is not None:
            return Outcome(verdict=SAT, witness=witness, nodes_expanded=nodes)
        if not free_cols.size:
            # point box that neither pruned nor produced a counterexample:
            # the objective is exactly 0 there, which is no strict violation
            continue
        widths = node.hi[free_cols] - node.lo[free_cols]
        k = int(np.argmax(widths))
        if widths[k] < spec.min_box_width:
            undecided = True
            continue
        col = free_cols[k]
        mid = (node.lo[col] + node.hi[col]) / 2.0
        left_hi = node.hi.copy()
        left_hi[col] = mid
        right_lo = node.lo.copy()
        right_lo[col] = mid
        stack.append(Box(right_lo, node.hi.copy()))
        stack.append(Box(node.lo.copy(), left_hi))
    if stack or undecided:
        return Outcome(verdict=UNKNOWN, witness=None, nodes_expanded=nodes)
    return Outcome(verdict=UNSAT, witness=None, nodes_expanded=nodes)


def solve(query: Query, spec: PerturbationSpec) -> Outcome:
    """Search the query box for a counterexample where y_j > y_c (strictly).

    SAT witnesses are confirmed by re-inference on the original network, so
    they always satisfy the reported inequality exactly.
    """
    network = query.network
    c, j = query.target_pair
    base_logits = infer(network, query.base)
    if base_logits.predicted != c:
        raise ValueError(
            f"query target assumes predicted class {c}, "
            f"but the network predicts {base_logits.predicted}"
        )
    box = perturbation_box(network, query.base, sorted(query.free), spec.epsilon)
    free_cols = np.array(sorted(i - 1 for i in query.free), dtype=np.intp)
    objective = class_difference_network(network, c, j)

    def confirm(point: np.ndarray) -> bool:
        clipped = np.clip(point, box.lo, box.hi)
        values = infer(network, clipped).values
        return bool(values[j] > values[c])

    outcome = _search_positive(objective, box, free_cols, spec, confirm)
    if outcome.verdict == SAT:
        witness = np.clip(outcome.witness, box.lo, box.hi)
        witness.flags.writeable = False
        return Outcome(verdict=SAT, witness=witness, nodes_expanded=outcome.nodes_expanded)
    return outcome


def check_valid(
    network: Network,
    x: np.ndarray,
    subset: Sequence[int] | frozenset[int],
    spec: PerturbationSpec,
    stats: OracleStats | None = None,
    ranked: bool = True,
) -> bool:
    """True iff perturbing every feature in ``subset`` by up to epsilon
    cannot change the predicted class.

    Challenger classes are tried in confidence order (or ascending index
    order when ``ranked`` is off); the first SAT or UNKNOWN returns False.
    """
    if stats is not None:
        stats.checkvalid_calls += 1
    subset = frozenset(subset)
    if not subset or spec.epsilon == 0.0:
        return True
    logits = infer(network, x)
    c = logits.predicted
    if ranked:
        challengers = confidence_ranking(logits)
    else:
        challengers = [k for k in range(network.num_classes) if k != c]
    for j in challengers:
        outcome = solve(
            Query(network=network, base=x, free=subset, target_pair=(c, j)), spec
        )
        if stats is not None:
            stats.record_solve(j, outcome.verdict)
        if outcome.verdict != UNSAT:
            return False
    return True


def check_valid_regression(
    network: Network,
    x: np.ndarray,
    subset: Sequence[int] | frozenset[int],
    spec: PerturbationSpec,
    stats: OracleStats | None = None,
) -> bool:
    """Single-output variant: True iff the output stays within +-delta of
    f(x) over the subset box. Decided by the same branch-and-bound, run once
    against each side of the tolerance band."""
    if network.num_classes != 1:
        raise ValueError("regression check requires a single-output network")
    if stats is not None:
        stats.checkvalid_calls += 1
    subset = frozenset(subset)
    if not subset or spec.epsilon == 0.0:
        return True
    fx = float(infer(network, x).values[0])
    box = perturbation_box(network, x, sorted(subset), spec.epsilon)
    free_cols = np.array(sorted(i - 1 for i in subset), dtype=np.intp)

    def confirm(point: np.ndarray) -> bool:
        clipped = np.clip(point, box.lo, box.hi)
        return bool(abs(float(infer(network, clipped).values[0]) - fx) > spec.delta)

    # f(x') > fx + delta, then f(x') < fx - delta
    for scale, shift in ((1.0, -(fx + spec.delta)), (-1.0, fx - spec.delta)):
        objective = _shifted_output_network(network, scale, shift)
        outcome = _search_positive(objective, box, free_cols, spec, confirm)
        if stats is not None:
            stats.record_solve(0, outcome.verdict)
        if outcome.verdict != UNSAT:
            return False
    return True
