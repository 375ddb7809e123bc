"""Explanation drivers: partition the features of one input into a minimal
explanation set A and an irrelevant set B whose joint perturbation cannot
change the prediction.

Three strategies walk the traversal order through the validity oracle:

* ``sequential`` tests features one at a time (m oracle calls).
* ``binary`` tests batches by recursive halving. A validated half is
  absorbed into B with one call; a failing half is split and both parts are
  re-examined, down to single features decided by the base case. Best case
  is 2 calls, worst case follows k(1)=1, k(2m)=2k(m)+1, k(2m+1)=k(m+1)+k(m)+1
  (= 2m-1 calls). The result is identical to sequential for a deterministic
  oracle.
* ``quickxplain`` recurses on both halves when neither validates, carrying
  the irrelevant set through, and skips re-validating a half already known
  to be a relevant singleton. Best case floor(log2 m)+1 calls, worst case
  2(m-1). Its partition may differ from sequential (the effective order
  changes), typically trading a little extra time for smaller explanations.

Every driver first checks the whole feature set; inputs that tolerate full
perturbation are reported robust with an empty explanation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import Network
from .traversal import Traversal
from .verifier import OracleStats, PerturbationSpec, check_valid

Oracle = Callable[[frozenset[int]], bool]

SEARCH_METHODS = ("sequential", "binary", "quickxplain")


def split_half(segment: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split an ordered segment into (first ceil(k/2), last floor(k/2))."""
    seg = tuple(segment)
    cut = (len(seg) + 1) // 2
    return seg[:cut], seg[cut:]


def sequential_partition(
    order: Sequence[int], oracle: Oracle, on_irrelevant=None
) -> tuple[frozenset[int], frozenset[int]]:
    a: set[int] = set()
    b: set[int] = set()
    for i in order:
        if oracle(frozenset(b | {i})):
            b.add(i)
            if on_irrelevant:
                on_irrelevant(frozenset(b))
        else:
            a.add(i)
    return frozenset(a), frozenset(b)


def binary_partition(
    order: Sequence[int], oracle: Oracle, on_irrelevant=None
) -> tuple[frozenset[int], frozenset[int]]:
    a: set[int] = set()
    b: set[int] = set()

    def absorb(features) -> None:
        b.update(features)
        if on_irrelevant:
            on_irrelevant(frozenset(b))

    def visit(segment: tuple[int, ...]) -> None:
        if len(segment) == 1:
            if oracle(frozenset(b) | frozenset(segment)):
                absorb(segment)
            else:
                a.add(segment[0])
            return
        first, second = split_half(segment)
        if oracle(frozenset(b) | frozenset(first)):
            absorb(first)
            if oracle(frozenset(b) | frozenset(second)):
                absorb(second)
            else:
                visit(second)
        else:
            visit(first)
            visit(second)

    # recursion depth is bounded by ceil(log2 m) + 1
    visit(tuple(order))
    return frozenset(a), frozenset(b)


def quickxplain_partition(
    order: Sequence[int], oracle: Oracle, on_irrelevant=None
) -> tuple[frozenset[int], frozenset[int]]:
    def note(beta: frozenset[int]) -> frozenset[int]:
        if on_irrelevant:
            on_irrelevant(beta)
        return beta

    def recurse(
        beta: frozenset[int], segment: tuple[int, ...]
    ) -> tuple[tuple[int, ...], frozenset[int]]:
        if len(segment) == 1:
            if oracle(beta | frozenset(segment)):
                return (), note(beta | frozenset(segment))
            return segment, beta
        first, second = split_half(segment)
        if oracle(beta | frozenset(first)):
            return recurse(note(beta | frozenset(first)), second)
        if oracle(beta | frozenset(second)):
            return recurse(note(beta | frozenset(second)), first)
        # neither half validates; halves already known to be relevant
        # singletons go straight into the explanation
        if len(first) == 1:
            a_first, beta1 = first, beta
        else:
            a_first, beta1 = recurse(beta, first)
        if len(second) == 1:
            a_second, beta2 = second, beta1
        else:
            a_second, beta2 = recurse(beta1, second)
        return a_first + a_second, beta2

    a, b = recurse(frozenset(), tuple(order))
    return frozenset(a), b


_PARTITIONS = {
    "sequential": sequential_partition,
    "binary": binary_partition,
    "quickxplain": quickxplain_partition,
}


@dataclass(frozen=True)
class ExplanationResult:
    """Partition of the features of one input: ``explanation`` (A) and
    ``irrelevant`` (B), plus the oracle counters and the configuration that
    produced it. ``robust`` inputs tolerate perturbation of every feature
    and have an empty explanation."""

    explanation: frozenset[int]
    irrelevant: frozenset[int]
    robust: bool
    stats: OracleStats
    traversal: Traversal
    spec: PerturbationSpec
    search: str
    confidence_ranking: bool
    wall_time: float

    def __post_init__(self):
        if self.explanation & self.irrelevant:
            raise ValueError("explanation and irrelevant sets overlap")
        if self.robust and self.explanation:
            raise ValueError("a robust input cannot have explanation features")


def _drive(
    network: Network,
    x: np.ndarray,
    traversal: Traversal,
    spec: PerturbationSpec,
    search: str,
    confidence_ranking: bool = True,
) -> ExplanationResult:
    if search not in _PARTITIONS:
        raise ValueError(f"unknown search method {search!r}")
    if len(traversal.order) != network.input_dim:
        raise ValueError("traversal does not cover the network's features")
    x = np.asarray(x, dtype=np.float64)
    stats = OracleStats()

    def oracle(subset: frozenset[int]) -> bool:
        return check_valid(network, x, subset, spec, stats, ranked=confidence_ranking)

    start = time.perf_counter()
    everything = frozenset(traversal.order)
    if oracle(everything):
        a, b, robust = frozenset(), everything, True
    else:
        a, b = _PARTITIONS[search](traversal.order, oracle)
        robust = False
    wall = time.perf_counter() - start
    return ExplanationResult(
        explanation=a,
        irrelevant=b,
        robust=robust,
        stats=stats,
        traversal=traversal,
        spec=spec,
        search=search,
        confidence_ranking=confidence_ranking,
        wall_time=wall,
    )


def explain_sequential(network, x, traversal, spec, confidence_ranking=True):
    return _drive(network, x, traversal, spec, "sequential", confidence_ranking)


def explain_binary(network, x, traversal, spec, confidence_ranking=True):
    return _drive(network, x, traversal, spec, "binary", confidence_ranking)


def explain_quickxplain(network, x, traversal, spec, confidence_ranking=True):
    return _drive(network, x, traversal, spec, "quickxplain", confidence_ranking)


def explain(network, x, traversal, spec, search="sequential", confidence_ranking=True):
    return _drive(network, x, traversal, spec, search, confidence_ranking)


@dataclass(frozen=True)
class ValidationReport:
    """Post-hoc re-check of an explanation against the oracle's verdicts."""

    partition_ok: bool
    sound: bool
    optimality_violations: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return self.partition_ok and self.sound and not self.optimality_violations


def validate_explanation(
    network: Network,
    x: np.ndarray,
    result: ExplanationResult,
    spec: PerturbationSpec,
    confidence_ranking: bool = True,
) -> ValidationReport:
    """Re-derive the three defining properties of a finished explanation:
    the sets partition the features, perturbing all of B is safe, and every
    feature of A is individually necessary (B plus that feature is unsafe)."""
    x = np.asarray(x, dtype=np.float64)
    everything = set(range(1, network.input_dim + 1))
    partition_ok = (
        not (result.explanation & result.irrelevant)
        and (result.explanation | result.irrelevant) == everything
    )
    stats = OracleStats()
    sound = check_valid(
        network, x, result.irrelevant, spec, stats, ranked=confidence_ranking
    )
    violations = tuple(
        i
        for i in sorted(result.explanation)
        if check_valid(
            network,
            x,
            result.irrelevant | {i},
            spec,
            stats,
            ranked=confidence_ranking,
        )
    )
    return ValidationReport(
        partition_ok=partition_ok, sound=sound, optimality_violations=violations
    )


def result_to_json(result: ExplanationResult) -> dict:
    """Flatten a result into the documented JSON shape (fixed key order)."""
    return {
        "explanation": sorted(result.explanation),
        "irrelevant": sorted(result.irrelevant),
        "robust": result.robust,
        "epsilon": result.spec.epsilon,
        "norm": result.spec.norm,
        "order_method": result.traversal.method,
        "search": result.search,
        "confidence_ranking": result.confidence_ranking,
        "oracle_calls": result.stats.checkvalid_calls,
        "solve_calls": result.stats.solve_calls,
        "solve_unknown": result.stats.unknown_solves,
        "min_box_width": result.spec.min_box_width,
        "max_nodes": result.spec.max_nodes,
        "delta": result.spec.delta,
        "wall_time_ms": result.wall_time * 1000.0,
    }


def write_pgm_mask(explanation: frozenset[int], width: int, height: int, sink) -> None:
    """ASCII PGM (P2) mask: explanation features at 255, all others 0.
    Feature i maps to pixel (i-1) in row-major order; width*height must
    equal the feature count the explanation was computed over."""
    rows = []
    for r in range(height):
        row = [
            "255" if (r * width + c + 1) in explanation else "0"
            for c in range(width)
        ]
        rows.append(" ".join(row))
    sink.write(f"P2\n{width} {height}\n255\n" + "\n".join(rows) + "\n")
