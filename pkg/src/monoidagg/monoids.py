"""Exact commutative-monoid algebra: reference monoids, balanced-tree folds
and law/homomorphism checkers.

Everything here is plain machine arithmetic (no learning); it is the oracle
layer the learnable aggregators are tested against. All checkers are
falsifiers: they sample, they do not prove.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Sequence

from .autodiff.rng import Prng

__all__ = [
    "INF",
    "ExactMonoid",
    "Leaf",
    "Node",
    "AggTree",
    "to_balanced_tree",
    "random_tree",
    "tree_fold",
    "left_fold",
    "second_min_plus",
    "second_min_enc",
    "second_min_dec",
    "second_minimum_oracle",
    "parity_fold",
    "LawReport",
    "check_monoid_laws",
    "HomReport",
    "check_homomorphism",
    "max_monoid",
    "int_sum_monoid",
    "parity_monoid",
    "second_min_monoid",
    "subtraction_pseudo_monoid",
]

INF = math.inf


def _default_eq(a, b) -> bool:
    try:
        import numpy as np

        if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
            return bool(np.array_equal(a, b))
    except ImportError:  # pragma: no cover
        pass
    return a == b


@dataclass(frozen=True)
class ExactMonoid:
    """A concrete (carrier, plus, identity) triple over machine values."""

    name: str
    identity: object
    plus: Callable
    eq: Callable = _default_eq

    def fold(self, xs: Sequence) -> object:
        return reduce(self.plus, xs, self.identity)


# ------------------------------------------------------------- balanced trees


class Leaf:
    __slots__ = ("index",)
    leaf_count = 1
    depth = 0

    def __init__(self, index: int):
        self.index = index

    def __repr__(self):
        return f"Leaf({self.index})"


class Node:
    __slots__ = ("left", "right", "leaf_count", "depth")

    def __init__(self, left: "AggTree", right: "AggTree"):
        self.left = left
        self.right = right
        self.leaf_count = left.leaf_count + right.leaf_count
        self.depth = 1 + max(left.depth, right.depth)

    def __repr__(self):
        return f"Node({self.left!r}, {self.right!r})"


AggTree = Leaf | Node


def to_balanced_tree(n: int) -> AggTree:
    """Balanced reduction tree over leaves 0..n-1.

    The left subtree takes the first ceil(n/2) leaves, so the depth is exactly
    ceil(log2 n) and an in-order traversal reads the leaves in index order.
    """
    if n < 1:
        raise ValueError("to_balanced_tree: need at least one leaf (callers handle the empty reduction)")

    def build(start: int, count: int) -> AggTree:
        if count == 1:
            return Leaf(start)
        k = (count + 1) // 2
        return Node(build(start, k), build(start + k, count - k))

    return build(0, n)


def random_tree(n: int, prng: Prng) -> AggTree:
    """Random-shape binary tree whose in-order leaves are still 0..n-1."""
    if n < 1:
        raise ValueError("random_tree: need at least one leaf")

    def build(start: int, count: int) -> AggTree:
        if count == 1:
            return Leaf(start)
        k = prng.randint(1, count - 1)
        return Node(build(start, k), build(start + k, count - k))

    return build(0, n)


def leaves_inorder(tree: AggTree) -> list[int]:
    out: list[int] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            out.append(node.index)
        else:
            stack.append(node.right)
            stack.append(node.left)
    return out


def tree_fold(m: ExactMonoid, tree: AggTree, leaves: Sequence) -> object:
    if tree.leaf_count != len(leaves):
        raise ValueError(f"tree_fold: tree has {tree.leaf_count} leaves, got {len(leaves)} values")

    def go(node: AggTree):
        if isinstance(node, Leaf):
            return leaves[node.index]
        return m.plus(go(node.left), go(node.right))

    return go(tree)


def left_fold(m: ExactMonoid, leaves: Sequence) -> object:
    acc = m.identity
    for x in leaves:
        acc = m.plus(acc, x)
    return acc


# ------------------------------------------------------------ second minimum


def second_min_plus(a: tuple, b: tuple) -> tuple:
    """Combine two (smallest, second-smallest) pairs: keep the two smallest of
    the four values."""
    c1, c2 = sorted([a[0], a[1], b[0], b[1]])[:2]
    return (c1, c2)


def second_min_enc(x) -> tuple:
    return (x, INF)


def second_min_dec(pair: tuple):
    return pair[1]


def second_minimum_oracle(xs: Sequence[int]):
    """Second-smallest element counting multiplicity; +inf for singletons."""
    if not xs:
        raise ValueError("second_minimum_oracle: empty input")
    acc = (INF, INF)
    for x in xs:
        acc = second_min_plus(acc, second_min_enc(x))
    return second_min_dec(acc)


def parity_fold(bits: Sequence[int]) -> int:
    acc = 0
    for b in bits:
        acc ^= b
    return acc


# ----------------------------------------------------------- reference monoids


max_monoid = ExactMonoid("max", -INF, max)
int_sum_monoid = ExactMonoid("int-sum", 0, lambda a, b: a + b)
parity_monoid = ExactMonoid("parity", 0, lambda a, b: a ^ b)
second_min_monoid = ExactMonoid("second-min", (INF, INF), second_min_plus)
subtraction_pseudo_monoid = ExactMonoid("subtraction", 0, lambda a, b: a - b)


# ------------------------------------------------------------------ law checks


@dataclass
class LawResult:
    law: str
    ok: bool
    checked: int
    counterexample: str | None = None

    def to_json(self) -> dict:
        return {"law": self.law, "ok": self.ok, "checked": self.checked, "counterexample": self.counterexample}


@dataclass
class LawReport:
    monoid: str
    results: list[LawResult]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.results)

    def result(self, law: str) -> LawResult:
        return next(r for r in self.results if r.law == law)

    def to_json(self) -> dict:
        return {"monoid": self.monoid, "ok": self.ok, "laws": [r.to_json() for r in self.results]}


def check_monoid_laws(m: ExactMonoid, sampler: Callable[[Prng], object], trials: int, prng: Prng) -> LawReport:
    """Sample tuples and test identity (both sides), commutativity and
    associativity, reporting the first counterexample per law."""
    identity = LawResult("identity", True, 0)
    comm = LawResult("commutativity", True, 0)
    assoc = LawResult("associativity", True, 0)

    for _ in range(trials):
        x = sampler(prng)
        y = sampler(prng)
        z = sampler(prng)
        if identity.ok:
            identity.checked += 1
            if not (m.eq(m.plus(x, m.identity), x) and m.eq(m.plus(m.identity, x), x)):
                identity.ok = False
                identity.counterexample = f"x={x!r}"
        if comm.ok:
            comm.checked += 1
            if not m.eq(m.plus(x, y), m.plus(y, x)):
                comm.ok = False
                comm.counterexample = f"x={x!r}, y={y!r}"
        if assoc.ok:
            assoc.checked += 1
            if not m.eq(m.plus(x, m.plus(y, z)), m.plus(m.plus(x, y), z)):
                assoc.ok = False
                assoc.counterexample = f"x={x!r}, y={y!r}, z={z!r}"
    return LawReport(m.name, [identity, comm, assoc])


# --------------------------------------------------------------- homomorphism


@dataclass
class HomReport:
    """Outcome of the four homomorphism clauses.

    Clauses: (i) h is a left inverse of g; (ii) h maps identity to identity;
    (iii) h distributes over the operation on products of g-images;
    (iv) reducing a multiset through F and mapping back equals reducing in M.
    """

    clauses: dict[str, LawResult]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.clauses.values())

    @property
    def structural_ok(self) -> bool:
        return all(self.clauses[c].ok for c in ("left_inverse", "identity", "operation"))

    def to_json(self) -> dict:
        return {"ok": self.ok, "clauses": {k: r.to_json() for k, r in self.clauses.items()}}


def check_homomorphism(
    F: ExactMonoid,
    M: ExactMonoid,
    g: Callable,
    h: Callable,
    sampler: Callable[[Prng], object],
    trials: int,
    prng: Prng,
    max_word: int = 8,
    max_multiset: int = 12,
) -> HomReport:
    """Falsifier for the subquotient condition linking a fixed monoid F to a
    target monoid M through maps g: M -> F and h: F -> M.

    Elements of the submonoid generated by g-images are sampled as products of
    up to ``max_word`` random g-images (the submonoid is infinite in general,
    so bounded words are the finite proxy).
    """

    def g_word() -> object:
        k = prng.randint(0, max_word)
        acc = F.identity
        for _ in range(k):
            acc = F.plus(acc, g(sampler(prng)))
        return acc

    left_inv = LawResult("left_inverse", True, 0)
    ident = LawResult("identity", True, 0)
    oper = LawResult("operation", True, 0)
    multiset = LawResult("multiset", True, 0)

    ident.checked = 1
    if not M.eq(h(F.identity), M.identity):
        ident.ok = False
        ident.counterexample = f"h(e_F)={h(F.identity)!r} != e_M={M.identity!r}"

    for _ in range(trials):
        if left_inv.ok:
            x = sampler(prng)
            left_inv.checked += 1
            if not M.eq(h(g(x)), x):
                left_inv.ok = False
                left_inv.counterexample = f"x={x!r}, h(g(x))={h(g(x))!r}"
        if oper.ok:
            u, v = g_word(), g_word()
            oper.checked += 1
            if not M.eq(h(F.plus(u, v)), M.plus(h(u), h(v))):
                oper.ok = False
                oper.counterexample = f"u={u!r}, v={v!r}"
        if multiset.ok:
            xs = [sampler(prng) for _ in range(prng.randint(0, max_multiset))]
            multiset.checked += 1
            direct = M.fold(xs)
            via_f = h(F.fold([g(x) for x in xs]))
            if not M.eq(direct, via_f):
                multiset.ok = False
                multiset.counterexample = f"xs={xs!r}, direct={direct!r}, via_F={via_f!r}"

    return HomReport({"left_inverse": left_inv, "identity": ident, "operation": oper, "multiset": multiset})
