import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vexplain import (
    Layer,
    Network,
    PerturbationSpec,
    Traversal,
    binary_partition,
    explain,
    explain_binary,
    explain_quickxplain,
    explain_sequential,
    quickxplain_partition,
    result_to_json,
    sequential_partition,
    split_half,
    traversal_order_index,
    validate_explanation,
    write_pgm_mask,
)


class CountingOracle:
    """Mock validity oracle: a subset is valid iff it avoids every relevant
    feature. Subset-monotone, like the real box-perturbation oracle."""

    def __init__(self, relevant):
        self.relevant = frozenset(relevant)
        self.calls = 0

    def __call__(self, subset):
        self.calls += 1
        return not (subset & self.relevant)


def quickxplain_no_shortcut(order, oracle):
    """The same divide-and-conquer but re-validating relevant singletons
    through the base case; the comparison baseline for the shortcut."""

    def recurse(beta, segment):
        if len(segment) == 1:
            if oracle(beta | frozenset(segment)):
                return (), beta | frozenset(segment)
            return segment, beta
        first, second = split_half(segment)
        if oracle(beta | frozenset(first)):
            return recurse(beta | frozenset(first), second)
        if oracle(beta | frozenset(second)):
            return recurse(beta | frozenset(second), first)
        a1, b1 = recurse(beta, first)
        a2, b2 = recurse(b1, second)
        return a1 + a2, b2

    a, b = recurse(frozenset(), tuple(order))
    return frozenset(a), b


def binary_worst_case_calls(m):
    if m == 1:
        return 1
    if m % 2 == 0:
        return 2 * binary_worst_case_calls(m // 2) + 1
    return binary_worst_case_calls(m // 2 + 1) + binary_worst_case_calls(m // 2) + 1


# ---------------------------------------------------------------------------
# split rule


def test_split_gives_larger_first_half():
    assert split_half((1, 2, 3, 4)) == ((1, 2), (3, 4))
    assert split_half((1, 2, 3)) == ((1, 2), (3,))
    assert split_half((7,)) == ((7,), ())
    first, second = split_half(tuple(range(1, 12)))
    assert len(first) == len(second) + 1
    assert first + second == tuple(range(1, 12))


# ---------------------------------------------------------------------------
# call counts on mock oracles


def test_sequential_counts_and_partitions():
    oracle = CountingOracle(relevant=())
    a, b = sequential_partition((1, 2, 3, 4), oracle)
    assert oracle.calls == 4 and a == frozenset() and b == {1, 2, 3, 4}
    oracle = CountingOracle(relevant=(1, 2, 3, 4))
    a, b = sequential_partition((1, 2, 3, 4), oracle)
    assert oracle.calls == 4 and a == {1, 2, 3, 4} and b == frozenset()


def test_binary_best_case_two_calls():
    oracle = CountingOracle(relevant=())
    a, b = binary_partition((1, 2, 3, 4), oracle)
    assert oracle.calls == 2 and a == frozenset() and b == {1, 2, 3, 4}


def test_binary_worst_case_recurrence_examples():
    oracle = CountingOracle(relevant=(1, 2, 3, 4))
    binary_partition((1, 2, 3, 4), oracle)
    assert oracle.calls == 7  # k4 = 2*k2 + 1, k2 = 2*k1 + 1, k1 = 1
    oracle = CountingOracle(relevant=(1, 2, 3))
    binary_partition((1, 2, 3), oracle)
    assert oracle.calls == 5  # k3 = k2 + k1 + 1


def test_quickxplain_best_case_logarithmic():
    oracle = CountingOracle(relevant=())
    a, b = quickxplain_partition(tuple(range(1, 9)), oracle)
    assert oracle.calls == 4  # floor(log2 8) + 1
    assert b == frozenset(range(1, 9))


def test_quickxplain_worst_case_linear():
    oracle = CountingOracle(relevant=tuple(range(1, 5)))
    a, b = quickxplain_partition((1, 2, 3, 4), oracle)
    assert oracle.calls == 6  # 2 * (m - 1)
    assert a == {1, 2, 3, 4}


def test_single_feature_costs_one_call_everywhere():
    for make in (sequential_partition, binary_partition, quickxplain_partition):
        for relevant in ((), (1,)):
            oracle = CountingOracle(relevant)
            make((1,), oracle)
            assert oracle.calls == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 64))
def test_count_formulas_hold_for_any_m(m):
    order = tuple(range(1, m + 1))
    oracle = CountingOracle(())
    binary_partition(order, oracle)
    assert oracle.calls == (2 if m >= 2 else 1)
    oracle = CountingOracle(order)
    binary_partition(order, oracle)
    assert oracle.calls == binary_worst_case_calls(m)
    oracle = CountingOracle(())
    quickxplain_partition(order, oracle)
    assert oracle.calls == (math.floor(math.log2(m)) + 1 if m >= 2 else 1)
    oracle = CountingOracle(order)
    quickxplain_partition(order, oracle)
    assert oracle.calls == (2 * (m - 1) if m >= 2 else 1)
    oracle = CountingOracle(())
    sequential_partition(order, oracle)
    assert oracle.calls == m


# ---------------------------------------------------------------------------
# partition semantics on mock oracles


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_binary_equals_sequential_on_monotone_oracles(data):
    m = data.draw(st.integers(1, 16))
    relevant = data.draw(st.sets(st.integers(1, m)))
    order = data.draw(st.permutations(list(range(1, m + 1))))
    a_seq, b_seq = sequential_partition(order, CountingOracle(relevant))
    a_bin, b_bin = binary_partition(order, CountingOracle(relevant))
    assert a_seq == a_bin and b_seq == b_bin


def test_all_drivers_recover_relevant_set_exhaustively():
    for m in range(1, 11):
        order = tuple(range(1, m + 1))
        for bits in range(2**m):
            relevant = frozenset(i for i in order if bits & (1 << (i - 1)))
            for make in (sequential_partition, binary_partition, quickxplain_partition):
                a, b = make(order, CountingOracle(relevant))
                assert a == relevant
                assert b == frozenset(order) - relevant


def test_brute_force_confirms_minimality_of_recovered_set():
    rng = np.random.default_rng(40)
    for _ in range(25):
        m = int(rng.integers(1, 11))
        order = tuple(range(1, m + 1))
        relevant = frozenset(int(i) for i in order if rng.random() < 0.4)
        oracle = CountingOracle(relevant)
        a, _ = quickxplain_partition(order, oracle)
        # enumerate all subsets: S suffices iff its complement validates
        sufficient = [
            frozenset(s)
            for r in range(m + 1)
            for s in itertools.combinations(order, r)
            if not ((frozenset(order) - frozenset(s)) & relevant)
        ]
        smallest = min(len(s) for s in sufficient)
        assert a in sufficient
        assert len(a) == smallest


def test_quickxplain_shortcut_never_costs_more_exhaustively():
    for m in range(1, 13):
        order = tuple(range(1, m + 1))
        for bits in range(2**m):
            relevant = frozenset(i for i in order if bits & (1 << (i - 1)))
            with_shortcut = CountingOracle(relevant)
            without = CountingOracle(relevant)
            a1, b1 = quickxplain_partition(order, with_shortcut)
            a2, b2 = quickxplain_no_shortcut(order, without)
            assert with_shortcut.calls <= without.calls
            assert a1 == a2 and b1 == b2


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_irrelevant_set_only_grows(data):
    m = data.draw(st.integers(1, 20))
    relevant = data.draw(st.sets(st.integers(1, m)))
    order = tuple(range(1, m + 1))
    for make in (sequential_partition, binary_partition, quickxplain_partition):
        snapshots = []
        make(order, CountingOracle(relevant), on_irrelevant=snapshots.append)
        for earlier, later in zip(snapshots, snapshots[1:]):
            assert earlier <= later


def test_deep_inputs_do_not_exhaust_the_stack():
    order = tuple(range(1, 4097))
    a, b = binary_partition(order, CountingOracle(()))
    assert b == frozenset(order)
    a, b = quickxplain_partition(order, CountingOracle((17, 3000)))
    assert a == {17, 3000}


# ---------------------------------------------------------------------------
# drivers wired to the real oracle


def spec(eps, **kw):
    return PerturbationSpec(epsilon=eps, **kw)


def test_sequential_example_is_robust_at_small_epsilon(identity3_network):
    # perturbing both features by 0.2 around (0.9, 0.1) cannot close the
    # 0.8 logit gap, so the input is epsilon-robust and A is empty
    t = traversal_order_index(2)
    r = explain_sequential(identity3_network, np.array([0.9, 0.1]), t, spec(0.2))
    assert r.robust and r.explanation == frozenset() and r.irrelevant == {1, 2}
    assert r.stats.checkvalid_calls == 1  # the up-front robustness check


def test_sequential_splits_at_larger_epsilon(identity3_network):
    # at eps 0.5 the gap can flip via x2, so the feature visited last stays
    # in the explanation; traversing (2, 1) pins feature 1
    t = Traversal(order=(2, 1), scores=(0.0, 0.0), method="index")
    r = explain_sequential(identity3_network, np.array([0.9, 0.1]), t, spec(0.5))
    assert not r.robust
    assert r.explanation == {1} and r.irrelevant == {2}
    assert r.stats.checkvalid_calls == 3  # robustness check + one per feature


def test_drivers_agree_on_real_network(identity3_network):
    t = Traversal(order=(2, 1), scores=(0.0, 0.0), method="index")
    x = np.array([0.9, 0.1])
    seq = explain_sequential(identity3_network, x, t, spec(0.5))
    binary = explain_binary(identity3_network, x, t, spec(0.5))
    qxp = explain_quickxplain(identity3_network, x, t, spec(0.5))
    assert seq.explanation == binary.explanation == qxp.explanation
    assert seq.irrelevant == binary.irrelevant == qxp.irrelevant


def test_explain_rejects_unknown_search(identity3_network):
    t = traversal_order_index(2)
    with pytest.raises(ValueError, match="search"):
        explain(identity3_network, np.array([0.9, 0.1]), t, spec(0.1), search="dfs")


def test_result_partition_and_robust_invariants(identity3_network):
    t = traversal_order_index(2)
    r = explain(identity3_network, np.array([0.9, 0.1]), t, spec(0.0))
    assert r.robust and r.explanation == frozenset()
    assert r.explanation | r.irrelevant == {1, 2}
    assert r.wall_time >= 0


# ---------------------------------------------------------------------------
# validation


def test_validate_passes_for_driver_output(identity3_network):
    t = Traversal(order=(2, 1), scores=(0.0, 0.0), method="index")
    x = np.array([0.9, 0.1])
    r = explain_binary(identity3_network, x, t, spec(0.5))
    report = validate_explanation(identity3_network, x, r, spec(0.5))
    assert report.passed
    assert report.partition_ok and report.sound and not report.optimality_violations


def test_validate_flags_hand_built_violation(identity3_network):
    t = Traversal(order=(2, 1), scores=(0.0, 0.0), method="index")
    x = np.array([0.9, 0.1])
    r = explain_binary(identity3_network, x, t, spec(0.5))
    import dataclasses

    broken = dataclasses.replace(
        r, explanation=frozenset(), irrelevant=r.irrelevant | r.explanation,
        robust=False,
    )
    report = validate_explanation(identity3_network, x, broken, spec(0.5))
    assert not report.sound
    assert not report.passed


def test_validate_robust_input_vacuously(identity3_network):
    t = traversal_order_index(2)
    x = np.array([0.9, 0.1])
    r = explain_sequential(identity3_network, x, t, spec(0.01))
    assert r.robust
    report = validate_explanation(identity3_network, x, r, spec(0.01))
    assert report.passed


# ---------------------------------------------------------------------------
# serialization


def test_result_json_shape(identity3_network):
    t = traversal_order_index(2)
    r = explain(identity3_network, np.array([0.9, 0.1]), t, spec(0.2), search="binary")
    doc = result_to_json(r)
    assert list(doc) == [
        "explanation", "irrelevant", "robust", "epsilon", "norm",
        "order_method", "search", "confidence_ranking", "oracle_calls",
        "solve_calls", "solve_unknown", "min_box_width", "max_nodes",
        "delta", "wall_time_ms",
    ]
    assert doc["norm"] == "linf"
    assert doc["search"] == "binary"
    assert doc["explanation"] == sorted(doc["explanation"])


def test_pgm_mask_output():
    buf = io.StringIO()
    write_pgm_mask(frozenset({1, 4}), width=2, height=2, sink=buf)
    assert buf.getvalue() == "P2\n2 2\n255\n255 0\n0 255\n"
