"""Exact-algebra tests: balanced trees, reference monoids, law checkers and
the homomorphism falsifier."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monoidagg.autodiff.rng import Prng
from monoidagg import monoids as mo


def _internal_count(tree) -> int:
    count = 0
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, mo.Node):
            count += 1
            stack.append(node.left)
            stack.append(node.right)
    return count


# ------------------------------------------------------------- tree building


def test_tree_single_leaf():
    t = mo.to_balanced_tree(1)
    assert isinstance(t, mo.Leaf) and t.index == 0 and t.depth == 0


def test_tree_of_four_is_perfect():
    t = mo.to_balanced_tree(4)
    assert isinstance(t, mo.Node)
    assert isinstance(t.left, mo.Node) and isinstance(t.right, mo.Node)
    assert mo.leaves_inorder(t.left) == [0, 1]
    assert mo.leaves_inorder(t.right) == [2, 3]
    assert t.depth == 2


def test_tree_of_five_split_rule():
    # ceil(5/2)=3 leaves on the left: ((0,1),2) against (3,4), depth 3
    t = mo.to_balanced_tree(5)
    assert mo.leaves_inorder(t.left) == [0, 1, 2]
    assert mo.leaves_inorder(t.right) == [3, 4]
    assert isinstance(t.left.left, mo.Node) and isinstance(t.left.right, mo.Leaf)
    assert t.depth == 3 == math.ceil(math.log2(5))


def test_tree_empty_rejected():
    with pytest.raises(ValueError):
        mo.to_balanced_tree(0)


def test_tree_depth_and_counts_full_range():
    for n in range(1, 4097):
        t = mo.to_balanced_tree(n)
        assert t.leaf_count == n
        assert t.depth == (0 if n == 1 else math.ceil(math.log2(n)))
        assert _internal_count(t) == n - 1
    # leaf order is the identity permutation (spot-checked densely, the full
    # range above already pins depth/counts)
    for n in list(range(1, 130)) + [255, 256, 257, 1000, 4096]:
        assert mo.leaves_inorder(mo.to_balanced_tree(n)) == list(range(n))


def test_random_tree_preserves_leaf_order():
    prng = Prng(4)
    for n in [1, 2, 3, 7, 20, 64]:
        for _ in range(10):
            t = mo.random_tree(n, prng)
            assert mo.leaves_inorder(t) == list(range(n))
            assert t.leaf_count == n


# ------------------------------------------------------------------ tree_fold


def test_tree_fold_max():
    t = mo.to_balanced_tree(5)
    assert mo.tree_fold(mo.max_monoid, t, [3, 1, 4, 1, 5]) == 5


def test_tree_fold_sum_any_shape():
    xs = list(range(1, 11))
    prng = Prng(8)
    for _ in range(20):
        t = mo.random_tree(10, prng)
        assert mo.tree_fold(mo.int_sum_monoid, t, xs) == 55


def test_tree_fold_second_min():
    xs = [mo.second_min_enc(v) for v in [7, 2, 9, 2]]
    t = mo.to_balanced_tree(4)
    assert mo.tree_fold(mo.second_min_monoid, t, xs) == (2, 2)


def test_tree_fold_count_mismatch():
    with pytest.raises(ValueError):
        mo.tree_fold(mo.max_monoid, mo.to_balanced_tree(3), [1, 2])


def test_tamari_rotation_invariance_exact_monoids():
    prng = Prng(15)
    for n in [1, 2, 5, 16, 33]:
        ints = [prng.randint(-50, 50) for _ in range(n)]
        want_max = mo.left_fold(mo.max_monoid, ints)
        want_sum = mo.left_fold(mo.int_sum_monoid, ints)
        for _ in range(25):
            t = mo.random_tree(n, prng)
            assert mo.tree_fold(mo.max_monoid, t, ints) == want_max
            assert mo.tree_fold(mo.int_sum_monoid, t, ints) == want_sum


# --------------------------------------------------------------- second-min


def test_second_min_plus_examples():
    assert mo.second_min_plus((3, 7), (1, 9)) == (1, 3)
    assert mo.second_min_plus((mo.INF, mo.INF), (5, 8)) == (5, 8)
    assert mo.second_min_plus((2, 2), (2, 5)) == (2, 2)


@given(st.lists(st.integers(0, 255), min_size=2, max_size=2).map(tuple),
       st.lists(st.integers(0, 255), min_size=2, max_size=2).map(tuple))
def test_second_min_plus_matches_sort(a, b):
    a = tuple(sorted(a))
    b = tuple(sorted(b))
    got = mo.second_min_plus(a, b)
    assert got == tuple(sorted([*a, *b])[:2])
    assert got[0] <= got[1]


def test_second_minimum_oracle_examples():
    assert mo.second_minimum_oracle([4, 4, 9]) == 4
    assert mo.second_minimum_oracle([200]) == mo.INF
    with pytest.raises(ValueError):
        mo.second_minimum_oracle([])


def test_second_minimum_oracle_against_sort():
    prng = Prng(77)
    for _ in range(1000):
        n = prng.randint(2, 24)
        xs = [prng.randint(0, 255) for _ in range(n)]
        assert mo.second_minimum_oracle(xs) == sorted(xs)[1]


# -------------------------------------------------------------------- parity


def test_parity_examples():
    assert mo.parity_fold([]) == 0
    assert mo.parity_fold([1, 1, 1]) == 1


@given(st.lists(st.integers(0, 1), min_size=64, max_size=64))
def test_parity_matches_sum_mod_two(bits):
    assert mo.parity_fold(bits) == sum(bits) % 2


# ----------------------------------------------------------------- law checks


def _int_sampler(lo, hi):
    return lambda prng: prng.randint(lo, hi)


def _pair_sampler(prng):
    a, b = sorted([prng.randint(0, 255), prng.randint(0, 255)])
    # mix in identity-like pairs so the infinity path is exercised
    if prng.randint(0, 9) == 0:
        return (a, mo.INF)
    return (a, b)


def test_laws_pass_for_reference_monoids():
    prng = Prng(10)
    assert mo.check_monoid_laws(mo.max_monoid, _int_sampler(-100, 100), 1000, prng).ok
    assert mo.check_monoid_laws(mo.int_sum_monoid, _int_sampler(-100, 100), 1000, prng).ok
    assert mo.check_monoid_laws(mo.parity_monoid, _int_sampler(0, 1), 1000, prng).ok
    assert mo.check_monoid_laws(mo.second_min_monoid, _pair_sampler, 1000, prng).ok


def test_second_min_laws_exhaustive_small_range():
    vals = [(a, b) for a in range(8) for b in range(8) if a <= b]
    vals.append((mo.INF, mo.INF))
    m = mo.second_min_monoid
    for x in vals:
        assert m.plus(x, m.identity) == x
        for y in vals:
            assert m.plus(x, y) == m.plus(y, x)
            for z in vals:
                assert m.plus(x, m.plus(y, z)) == m.plus(m.plus(x, y), z)


def test_subtraction_fails_commutativity_with_counterexample():
    report = mo.check_monoid_laws(mo.subtraction_pseudo_monoid, _int_sampler(-100, 100), 1000, Prng(3))
    assert not report.ok
    comm = report.result("commutativity")
    assert not comm.ok and comm.counterexample is not None


def test_law_report_json_roundtrip():
    report = mo.check_monoid_laws(mo.parity_monoid, _int_sampler(0, 1), 10, Prng(0))
    j = report.to_json()
    assert j["monoid"] == "parity" and j["ok"] is True
    assert {r["law"] for r in j["laws"]} == {"identity", "commutativity", "associativity"}


# -------------------------------------------------------------- homomorphism


def _parity_setup():
    F = mo.int_sum_monoid
    M = mo.parity_monoid
    g = lambda x: x            # inclusion of {0,1} into the integers
    h = lambda n: n % 2
    return F, M, g, h


def test_homomorphism_parity_passes():
    F, M, g, h = _parity_setup()
    report = mo.check_homomorphism(F, M, g, h, _int_sampler(0, 1), 500, Prng(20))
    assert report.ok


def test_homomorphism_perturbed_fails_operation_clause():
    F, M, g, _ = _parity_setup()
    h_bad = lambda n: min(n % 3, 1)  # mod 3 clamped into {0,1}
    report = mo.check_homomorphism(F, M, g, h_bad, _int_sampler(0, 1), 500, Prng(21))
    assert not report.clauses["operation"].ok
    assert report.clauses["operation"].counterexample is not None


def test_homomorphism_identity_maps_pass():
    M = mo.parity_monoid
    report = mo.check_homomorphism(M, M, lambda x: x, lambda x: x, _int_sampler(0, 1), 200, Prng(22))
    assert report.ok


def test_homomorphism_perturbed_found_by_small_search():
    # independent brute-force confirmation that the perturbed map really does
    # violate the operation clause on small sums of g-images
    h_bad = lambda n: min(n % 3, 1)
    violations = [
        (x, y)
        for x in range(9)
        for y in range(9)
        if h_bad(x + y) != (h_bad(x) ^ h_bad(y))
    ]
    assert violations, "expected the clamped mod-3 map to violate the operation law"


def test_clause_iv_agreement_both_directions():
    F, M, g, h = _parity_setup()
    good = mo.check_homomorphism(F, M, g, h, _int_sampler(0, 1), 500, Prng(23))
    assert good.structural_ok and good.clauses["multiset"].ok

    h_bad = lambda n: min(n % 3, 1)
    bad = mo.check_homomorphism(F, M, g, h_bad, _int_sampler(0, 1), 500, Prng(24))
    assert not bad.structural_ok and not bad.clauses["multiset"].ok
