"""Aggregators over the autodiff core.

Three families behind one interface:

* fixed: sum / max / mean and a simplified multi-aggregator baseline
  (mean, max, min, std with degree scalers and a learned projection);
* recurrent: a GRU fold with optional pairwise swap regularization;
* tree: a learned commutative binary operator (symmetrized GRU) folded over
  a balanced binary tree, with optional commutativity/associativity
  regularization accumulated at the tree nodes.

Within one multiset the tree is evaluated level-synchronously: every operator
application at the same schedule depth is one batched call, so the sequential
application count equals the tree depth. Calls over many multisets of equal
size batch further across samples (rows are stored node-major: node t of
sample b lives at row t*B + b).

Fixed reductions run in canonical order (rows lexicographically sorted, fixed
pairwise tree), so their outputs are bit-identical under input permutations.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.engine import ShapeError, Tensor, record
from .autodiff.ops import _sigmoid_stable
from .autodiff.optim import ParameterStore
from .autodiff.rng import Prng
from .monoids import Leaf, Node, to_balanced_tree

__all__ = [
    "KINDS",
    "LEARNABLE_KINDS",
    "FIXED_KINDS",
    "AggregatorConfig",
    "GruCellParams",
    "RegLossAccumulator",
    "AggStats",
    "gru_cell",
    "gru_cell_batch",
    "binary_gru_apply",
    "binary_gru_batch",
    "BinaryGruOperator",
    "ExactMaxOperator",
    "recurrent_aggregate",
    "tree_aggregate",
    "fixed_aggregate",
    "pna_lite_aggregate",
    "shuffle_batch",
    "build_aggregator",
    "TreeAggregator",
    "RecurrentAggregator",
    "FixedAggregator",
    "PnaLiteAggregator",
]

FIXED_KINDS = ("sum", "max", "mean", "pna-lite")
LEARNABLE_KINDS = ("gru", "binary-gru")
KINDS = FIXED_KINDS + LEARNABLE_KINDS

SWAP_PAIRS_PER_SAMPLE = 4


@dataclass
class AggregatorConfig:
    """Selects and parameterizes one aggregator.

    Regularization weights only apply to the kinds that define the matching
    loss: assoc/comm (and identity, with padding) belong to binary-gru, swap
    to gru. Anything else must leave them at 0.
    """

    kind: str
    hidden_dim: int
    lambda_assoc: float = 0.0
    lambda_comm: float = 0.0
    lambda_swap: float = 0.0
    lambda_identity: float = 0.0
    shuffle: bool = True
    pad_to_power_of_two: bool = False

    def validate(self) -> "AggregatorConfig":
        if self.kind not in KINDS:
            raise ValueError(f"unknown aggregator kind {self.kind!r} (expected one of {KINDS})")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        for name in ("lambda_assoc", "lambda_comm", "lambda_swap", "lambda_identity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kind != "binary-gru":
            if self.lambda_assoc or self.lambda_comm:
                raise ValueError(f"lambda_assoc/lambda_comm require kind 'binary-gru', not {self.kind!r}")
            if self.pad_to_power_of_two:
                raise ValueError("pad_to_power_of_two requires kind 'binary-gru'")
        if self.kind != "gru" and self.lambda_swap:
            raise ValueError(f"lambda_swap requires kind 'gru', not {self.kind!r}")
        if self.lambda_identity and not self.pad_to_power_of_two:
            raise ValueError("lambda_identity requires pad_to_power_of_two")
        return self

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "hidden_dim": self.hidden_dim,
            "lambda_assoc": self.lambda_assoc,
            "lambda_comm": self.lambda_comm,
            "lambda_swap": self.lambda_swap,
            "lambda_identity": self.lambda_identity,
            "shuffle": self.shuffle,
            "pad_to_power_of_two": self.pad_to_power_of_two,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AggregatorConfig":
        return cls(**obj).validate()


@dataclass
class AggStats:
    """Instrumentation for one aggregation call.

    ``apply_count`` counts operator applications on the aggregation path per
    sample times samples; regularization extras are tracked separately.
    ``critical_path`` is the longest chain of sequentially dependent operator
    applications in the call.
    """

    apply_count: int = 0
    reg_apply_count: int = 0
    critical_path: int = 0
    empty_groups: int = 0
    per_size: dict = field(default_factory=dict)

    def note(self, n: int, samples: int, ops_per_sample: int, depth: int) -> None:
        self.apply_count += ops_per_sample * samples
        self.critical_path = max(self.critical_path, depth)
        entry = self.per_size.setdefault(n, {"samples": 0, "ops_per_sample": ops_per_sample, "depth": depth})
        entry["samples"] += samples


class RegLossAccumulator:
    """Per-kind regularization terms gathered during aggregation.

    Each stored tensor is a 1-d vector of squared-norm terms. The mean is
    taken per kind before weighting; a kind with no terms contributes exactly
    zero to the total loss.
    """

    KINDS = ("comm", "assoc", "swap", "identity")

    def __init__(self):
        self.terms: dict[str, list[Tensor]] = {k: [] for k in self.KINDS}
        self.counts: dict[str, int] = {k: 0 for k in self.KINDS}

    def add(self, kind: str, term_vec: Tensor) -> None:
        self.terms[kind].append(term_vec)
        self.counts[kind] += int(term_vec.data.shape[0])

    def mean(self, kind: str) -> Tensor | None:
        parts = self.terms[kind]
        if not parts:
            return None
        joined = parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)
        return ops.reduce_mean(joined)

    def mean_value(self, kind: str) -> float:
        m = self.mean(kind)
        return 0.0 if m is None else m.item()

    def weighted_total(self, config: AggregatorConfig) -> Tensor | None:
        """lambda-weighted sum of per-kind means; None when nothing applies."""
        weights = {
            "comm": config.lambda_comm,
            "assoc": config.lambda_assoc,
            "swap": config.lambda_swap,
            "identity": config.lambda_identity,
        }
        total = None
        for kind, lam in weights.items():
            if lam <= 0:
                continue
            m = self.mean(kind)
            if m is None:
                continue
            piece = ops.smul(m, lam)
            total = piece if total is None else ops.add(total, piece)
        return total


# ------------------------------------------------------------------ GRU cell


@dataclass
class GruCellParams:
    """Update/reset/candidate kernels and biases of one GRU cell."""

    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wc: Tensor
    uc: Tensor
    bc: Tensor

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, h: int, prng: Prng) -> "GruCellParams":
        def kernel(name):
            return store.create(f"{prefix}.{name}", (h, h), "glorot-uniform", prng)

        def bias(name):
            return store.create(f"{prefix}.{name}", (h,), "zeros", prng)

        return cls(
            wz=kernel("wz"), uz=kernel("uz"), bz=bias("bz"),
            wr=kernel("wr"), ur=kernel("ur"), br=bias("br"),
            wc=kernel("wc"), uc=kernel("uc"), bc=bias("bc"),
        )

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "GruCellParams":
        return cls(**{name: store[f"{prefix}.{name}"] for name in ("wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc")})

    def tensors(self) -> tuple[Tensor, ...]:
        return (self.wz, self.uz, self.bz, self.wr, self.ur, self.br, self.wc, self.uc, self.bc)


def gru_cell_batch(x: Tensor, s: Tensor, p: GruCellParams) -> Tensor:
    """Gated update of a batch of states by a batch of inputs.

    z = sigma(x Wz + s Uz + bz), r = sigma(x Wr + s Ur + br),
    c = tanh(x Wc + (r*s) Uc + bc), out = (1-z)*s + z*c.

    Fused into a single tape node: the closed-form backward below is checked
    against finite differences in the test suite.
    """
    xd, sd = x.data, s.data
    if xd.ndim != 2 or sd.ndim != 2 or xd.shape != sd.shape:
        raise ShapeError(f"gru_cell: input {xd.shape} and state {sd.shape} must be equal 2-d shapes")
    if xd.shape[1] != p.wz.data.shape[0]:
        raise ShapeError(f"gru_cell: width {xd.shape[1]} does not match kernels {p.wz.data.shape}")

    wz, uz, bz = p.wz.data, p.uz.data, p.bz.data
    wr, ur, br = p.wr.data, p.ur.data, p.br.data
    wc, uc, bc = p.wc.data, p.uc.data, p.bc.data

    z = _sigmoid_stable(xd @ wz + sd @ uz + bz)
    r = _sigmoid_stable(xd @ wr + sd @ ur + br)
    rs = r * sd
    c = np.tanh(xd @ wc + rs @ uc + bc)
    out = (1.0 - z) * sd + z * c

    def bwd(up):
        dz = up * (c - sd)
        dc = up * z
        ds = up * (1.0 - z)

        dc_pre = dc * (1.0 - c * c)
        dwc = xd.T @ dc_pre
        dx = dc_pre @ wc.T
        drs = dc_pre @ uc.T
        duc = rs.T @ dc_pre
        dbc = dc_pre.sum(axis=0)

        dr = drs * sd
        ds += drs * r
        dr_pre = dr * r * (1.0 - r)
        dwr = xd.T @ dr_pre
        dx += dr_pre @ wr.T
        dur = sd.T @ dr_pre
        ds += dr_pre @ ur.T
        dbr = dr_pre.sum(axis=0)

        dz_pre = dz * z * (1.0 - z)
        dwz = xd.T @ dz_pre
        dx += dz_pre @ wz.T
        duz = sd.T @ dz_pre
        ds += dz_pre @ uz.T
        dbz = dz_pre.sum(axis=0)

        return (dx, ds, dwz, duz, dbz, dwr, dur, dbr, dwc, duc, dbc)

    return record("gru_cell", (x, s) + p.tensors(), out, bwd)


def gru_cell(x: Tensor, s: Tensor, p: GruCellParams) -> Tensor:
    """Single-vector GRU cell: input x, state s, both (h,)."""
    if x.data.ndim != 1 or s.data.ndim != 1:
        raise ShapeError(f"gru_cell: expected vectors, got {x.data.shape} and {s.data.shape}")
    out = gru_cell_batch(ops.reshape(x, (1, -1)), ops.reshape(s, (1, -1)), p)
    return ops.reshape(out, (-1,))


def binary_gru_batch(a: Tensor, b: Tensor, p: GruCellParams) -> Tensor:
    """Symmetrized cell (cell(a, b) + cell(b, a)) / 2.

    The first argument plays the cell's input role, the second its state; the
    symmetrization makes the output independent of that choice, bit-exactly,
    since float addition is commutative and halving is exact.
    """
    return ops.smul(ops.add(gru_cell_batch(a, b, p), gru_cell_batch(b, a, p)), 0.5)


def binary_gru_apply(a: Tensor, b: Tensor, p: GruCellParams) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"binary_gru_apply: expected vectors, got {a.data.shape} and {b.data.shape}")
    out = binary_gru_batch(ops.reshape(a, (1, -1)), ops.reshape(b, (1, -1)), p)
    return ops.reshape(out, (-1,))


class BinaryGruOperator:
    def __init__(self, params: GruCellParams):
        self.params = params

    def apply(self, a: Tensor, b: Tensor) -> Tensor:
        return binary_gru_batch(a, b, self.params)


class ExactMaxOperator:
    """Elementwise max as the tree operator; a lawful monoid, used to pin the
    regularization losses at exactly zero."""

    def apply(self, a: Tensor, b: Tensor) -> Tensor:
        return ops.emax(a, b)


# ------------------------------------------------------------------ tree plan


class _TreePlan:
    """Precomputed schedule for one leaf count: per-round child references,
    regularization gather patterns and bookkeeping counts. References are
    local pool row indices (leaves first, then internal nodes in round
    order)."""

    __slots__ = (
        "n", "depth", "root", "rounds",
        "comm_node", "comm_left", "comm_right",
        "assoc_r1", "assoc_r2", "assoc_lhs", "assoc_rhs", "assoc_count",
    )

    def __init__(self, n: int):
        self.n = n
        tree = to_balanced_tree(n)
        self.depth = tree.depth

        rnd: dict[int, int] = {}
        post: list[Node] = []

        def walk(node):
            if isinstance(node, Leaf):
                rnd[id(node)] = 0
                return
            walk(node.left)
            walk(node.right)
            rnd[id(node)] = 1 + max(rnd[id(node.left)], rnd[id(node.right)])
            post.append(node)

        walk(tree)

        by_round: dict[int, list[Node]] = defaultdict(list)
        for node in post:
            by_round[rnd[id(node)]].append(node)

        ref: dict[int, int] = {}

        def node_ref(node) -> int:
            return node.index if isinstance(node, Leaf) else ref[id(node)]

        next_ref = n
        self.rounds = []
        for r in range(1, self.depth + 1):
            nodes = by_round[r]
            for node in nodes:
                ref[id(node)] = next_ref
                next_ref += 1
            self.rounds.append((
                np.asarray([node_ref(v.left) for v in nodes], dtype=np.intp),
                np.asarray([node_ref(v.right) for v in nodes], dtype=np.intp),
            ))
        self.root = node_ref(tree)

        internal = [v for r in range(1, self.depth + 1) for v in by_round[r]]
        self.comm_node = np.asarray([node_ref(v) for v in internal], dtype=np.intp)
        self.comm_left = np.asarray([node_ref(v.left) for v in internal], dtype=np.intp)
        self.comm_right = np.asarray([node_ref(v.right) for v in internal], dtype=np.intp)

        # Associativity terms over memoized subtree values. At a node whose
        # children are both internal (subtrees (a b) and (c d)) the two terms
        # are |((A+B)+C) - (A+(B+C))| and |((B+C)+D) - (B+(C+D))|; when the
        # right child is a leaf c the single term is |((A+B)+c) - (A+(B+c))|,
        # whose left side is the node's own value. New applications are
        # scheduled in two batched rounds after the main fold.
        P = 2 * n - 1
        r1: list[tuple[int, int]] = []
        r2: list[tuple[int, int]] = []
        lhs: list[int] = []
        rhs: list[int] = []

        def add_r1(x_ref: int, y_ref: int) -> int:
            r1.append((x_ref, y_ref))
            return P + len(r1) - 1

        def add_r2(x_ref: int, y_ref: int) -> int:
            r2.append((x_ref, y_ref))
            return len(r2) - 1  # offset applied once r1 size is final

        for v in internal:
            left, right = v.left, v.right
            if isinstance(left, Node) and isinstance(right, Node):
                a, b = node_ref(left.left), node_ref(left.right)
                c, d = node_ref(right.left), node_ref(right.right)
                lhs1 = add_r1(node_ref(left), c)        # (A+B)+C, left child memoized
                bc = add_r1(b, c)
                rhs2 = add_r1(b, node_ref(right))       # B+(C+D), right child memoized
                rhs1 = add_r2(a, bc)                    # A+(B+C)
                lhs2 = add_r2(bc, d)                    # (B+C)+D
                lhs.extend([lhs1, -1 - lhs2])           # negative marks an r2 slot
                rhs.extend([-1 - rhs1, rhs2])
            elif isinstance(left, Node) and isinstance(right, Leaf):
                a, b = node_ref(left.left), node_ref(left.right)
                c = node_ref(right)
                bc = add_r1(b, c)
                rhs1 = add_r2(a, bc)
                lhs.append(node_ref(v))                 # (A+B)+c is the node itself
                rhs.append(-1 - rhs1)

        base2 = P + len(r1)
        fix = lambda x: (base2 - 1 - x) if x < 0 else x
        self.assoc_r1 = (
            np.asarray([x for x, _ in r1], dtype=np.intp),
            np.asarray([y for _, y in r1], dtype=np.intp),
        )
        self.assoc_r2 = (
            np.asarray([x for x, _ in r2], dtype=np.intp),
            np.asarray([y for _, y in r2], dtype=np.intp),
        )
        self.assoc_lhs = np.asarray([fix(x) for x in lhs], dtype=np.intp)
        self.assoc_rhs = np.asarray([fix(x) for x in rhs], dtype=np.intp)
        self.assoc_count = len(lhs)


_PLANS: dict[int, _TreePlan] = {}


def _plan(n: int) -> _TreePlan:
    plan = _PLANS.get(n)
    if plan is None:
        plan = _TreePlan(n)
        _PLANS[n] = plan
    return plan


def assoc_term_count(n: int) -> int:
    """Number of associativity terms the balanced tree over n leaves yields."""
    return _plan(n).assoc_count if n >= 2 else 0


def _rows(refs: np.ndarray, B: int) -> np.ndarray:
    return (refs[:, None] * B + np.arange(B)).ravel()


def _sq_norm_rows(diff: Tensor) -> Tensor:
    return ops.reduce_sum(ops.square(diff), axis=-1)


def _broadcast_state(state: Tensor, B: int) -> Tensor:
    zeros = Tensor(np.zeros((B, state.data.shape[0]), dtype=state.data.dtype))
    return ops.add(zeros, state)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1)).bit_length()


def _tree_forward(
    leaves: Tensor,
    B: int,
    n: int,
    op,
    config: AggregatorConfig,
    acc: RegLossAccumulator | None,
    stats: AggStats,
    identity: Tensor | None,
) -> Tensor:
    """Aggregate B same-size multisets stored node-major in ``leaves``."""
    if config.pad_to_power_of_two and identity is not None:
        n_pad = _next_pow2(n)
        if n_pad != n:
            pad = _broadcast_state(identity, (n_pad - n) * B)
            leaves = ops.concat([leaves, pad], axis=0)
        n_eff = n_pad
    else:
        n_eff = n

    plan = _plan(n_eff)
    pool = leaves
    for left_refs, right_refs in plan.rounds:
        left = ops.gather_rows(pool, _rows(left_refs, B))
        right = ops.gather_rows(pool, _rows(right_refs, B))
        out = op.apply(left, right)
        pool = ops.concat([pool, out], axis=0)
    result = ops.take_slice(pool, slice(plan.root * B, plan.root * B + B))
    stats.note(n, B, n_eff - 1, plan.depth)

    if acc is not None and config.lambda_comm > 0 and plan.comm_node.size:
        swapped = op.apply(
            ops.gather_rows(pool, _rows(plan.comm_right, B)),
            ops.gather_rows(pool, _rows(plan.comm_left, B)),
        )
        node_vals = ops.gather_rows(pool, _rows(plan.comm_node, B))
        acc.add("comm", _sq_norm_rows(ops.sub(node_vals, swapped)))
        stats.reg_apply_count += plan.comm_node.size * B

    if acc is not None and config.lambda_assoc > 0 and plan.assoc_count:
        r1x, r1y = plan.assoc_r1
        r2x, r2y = plan.assoc_r2
        out1 = op.apply(ops.gather_rows(pool, _rows(r1x, B)), ops.gather_rows(pool, _rows(r1y, B)))
        pool = ops.concat([pool, out1], axis=0)
        out2 = op.apply(ops.gather_rows(pool, _rows(r2x, B)), ops.gather_rows(pool, _rows(r2y, B)))
        pool = ops.concat([pool, out2], axis=0)
        lhs = ops.gather_rows(pool, _rows(plan.assoc_lhs, B))
        rhs = ops.gather_rows(pool, _rows(plan.assoc_rhs, B))
        acc.add("assoc", _sq_norm_rows(ops.sub(lhs, rhs)))
        stats.reg_apply_count += (r1x.size + r2x.size) * B

    if acc is not None and config.lambda_identity > 0 and identity is not None:
        orig = ops.take_slice(leaves, slice(0, n * B)) if n_eff != n else leaves
        folded = op.apply(orig, _broadcast_state(identity, n * B))
        acc.add("identity", _sq_norm_rows(ops.sub(folded, orig)))
        stats.reg_apply_count += n * B

    return result


def _recurrent_forward(
    xs: Tensor,
    B: int,
    n: int,
    cell: GruCellParams,
    initial_state: Tensor,
    config: AggregatorConfig,
    acc: RegLossAccumulator | None,
    stats: AggStats,
    prng: Prng | None,
) -> Tensor:
    """Left fold of the cell over B same-size sequences (node-major rows)."""
    state = _broadcast_state(initial_state, B)
    states = [state]
    for t in range(n):
        x_t = ops.take_slice(xs, slice(t * B, (t + 1) * B))
        state = gru_cell_batch(x_t, state, cell)
        states.append(state)
    stats.note(n, B, n, n)

    if acc is not None and config.lambda_swap > 0 and n >= 2:
        rng = prng if prng is not None else Prng(0, stream=n)
        k = min(SWAP_PAIRS_PER_SAMPLE, n - 1)
        positions = sorted(rng.permutation(n - 1)[:k])
        for i in positions:
            x_i = ops.take_slice(xs, slice(i * B, (i + 1) * B))
            x_j = ops.take_slice(xs, slice((i + 1) * B, (i + 2) * B))
            one_two = gru_cell_batch(x_j, states[i + 1], cell)
            two_one = gru_cell_batch(x_i, gru_cell_batch(x_j, states[i], cell), cell)
            acc.add("swap", _sq_norm_rows(ops.sub(one_two, two_one)))
            stats.reg_apply_count += 3 * B
    return state


# ----------------------------------------------------------- fixed reductions


def _fixed_reduce(x3: Tensor, kind: str, n: int) -> Tensor:
    if kind == "sum":
        return ops.sorted_tree_sum(x3)
    if kind == "mean":
        return ops.smul(ops.sorted_tree_sum(x3), 1.0 / n)
    if kind == "max":
        return ops.reduce_max0(x3)
    raise ValueError(f"unknown fixed reduction {kind!r}")


def _pna_blocks(x3: Tensor, n: int, delta: float) -> list[Tensor]:
    mean = ops.smul(ops.sorted_tree_sum(x3), 1.0 / n)
    mx = ops.reduce_max0(x3)
    mn = ops.reduce_min0(x3)
    mean_sq = ops.smul(ops.sorted_tree_sum(ops.square(x3)), 1.0 / n)
    std = ops.sqrt0(ops.sub(mean_sq, ops.square(mean)))
    base = [mean, mx, mn, std]
    amp = math.log(n + 1.0) / delta
    att = delta / math.log(n + 1.0)
    blocks = list(base)
    blocks += [ops.smul(t, amp) for t in base]
    blocks += [ops.smul(t, att) for t in base]
    return blocks


# ------------------------------------------------------------ aggregator API


class _BaseAggregator:
    def __init__(self, config: AggregatorConfig):
        self.config = config.validate()
        self.last_stats = AggStats()

    def init_params(self, store: ParameterStore, prng: Prng, prefix: str = "agg") -> None:
        pass

    def bind_params(self, store: ParameterStore, prefix: str = "agg") -> None:
        pass

    def aggregate_grouped(
        self,
        messages: Tensor,
        groups: list[np.ndarray],
        acc: RegLossAccumulator | None = None,
        prng: Prng | None = None,
    ) -> Tensor:
        raise NotImplementedError

    def aggregate(self, messages: Tensor, acc: RegLossAccumulator | None = None, prng: Prng | None = None) -> Tensor:
        """Aggregate a single multiset given as an (n, h) tensor (n may be 0)."""
        n = messages.data.shape[0] if messages.data.ndim == 2 else 0
        out = self.aggregate_grouped(messages, [np.arange(n, dtype=np.intp)], acc=acc, prng=prng)
        return ops.reshape(out, (-1,))

    def _buckets(self, groups: list[np.ndarray]):
        by_size: dict[int, list[int]] = defaultdict(list)
        for gi, g in enumerate(groups):
            by_size[len(g)].append(gi)
        return by_size

    def _assemble(self, groups_count: int, pieces: list[tuple[list[int], Tensor]], h: int, dtype) -> Tensor:
        """Restore original group order from per-bucket outputs."""
        if len(pieces) == 1 and pieces[0][0] == list(range(groups_count)):
            return pieces[0][1]
        order = np.empty(groups_count, dtype=np.intp)
        pos = 0
        for idxs, _ in pieces:
            for gi in idxs:
                order[gi] = pos
                pos += 1
        joined = ops.concat([t for _, t in pieces], axis=0)
        return ops.gather_rows(joined, order)

    def _gather_bucket(self, messages: Tensor, groups: list[np.ndarray], idxs: list[int], n: int) -> Tensor:
        # node-major rows: node t of bucket sample b at row t*B + b
        mat = np.stack([np.asarray(groups[gi], dtype=np.intp) for gi in idxs], axis=0)  # (B, n)
        return ops.gather_rows(messages, mat.T.ravel())


class FixedAggregator(_BaseAggregator):
    def aggregate_grouped(self, messages, groups, acc=None, prng=None):
        self.last_stats = stats = AggStats()
        h = self.config.hidden_dim
        kind = self.config.kind
        pieces = []
        for n, idxs in sorted(self._buckets(groups).items()):
            B = len(idxs)
            if n == 0:
                stats.empty_groups += B
                pieces.append((idxs, Tensor(np.zeros((B, h), dtype=np.float32))))
                continue
            rows = self._gather_bucket(messages, groups, idxs, n)
            x3 = ops.reshape(rows, (n, B, h))
            pieces.append((idxs, _fixed_reduce(x3, kind, n)))
            stats.note(n, B, n - 1, 1 if n > 1 else 0)
        return self._assemble(len(groups), pieces, h, messages.data.dtype)


class PnaLiteAggregator(_BaseAggregator):
    """mean/max/min/std, each scaled by identity, amplification
    log(n+1)/delta and attenuation delta/log(n+1), concatenated and projected
    back to the hidden width by a learned dense layer."""

    def __init__(self, config: AggregatorConfig, delta: float = math.log(2.0)):
        super().__init__(config)
        self.delta = float(delta)
        self.proj_w: Tensor | None = None
        self.proj_b: Tensor | None = None

    def init_params(self, store, prng, prefix="agg"):
        h = self.config.hidden_dim
        self.proj_w = store.create(f"{prefix}.pna.proj_w", (12 * h, h), "glorot-uniform", prng)
        self.proj_b = store.create(f"{prefix}.pna.proj_b", (h,), "zeros", prng)

    def bind_params(self, store, prefix="agg"):
        self.proj_w = store[f"{prefix}.pna.proj_w"]
        self.proj_b = store[f"{prefix}.pna.proj_b"]

    def aggregate_grouped(self, messages, groups, acc=None, prng=None):
        if self.proj_w is None:
            raise ValueError("pna-lite aggregator has no parameters bound")
        self.last_stats = stats = AggStats()
        h = self.config.hidden_dim
        pieces = []
        for n, idxs in sorted(self._buckets(groups).items()):
            B = len(idxs)
            if n == 0:
                stats.empty_groups += B
                pieces.append((idxs, Tensor(np.zeros((B, h), dtype=np.float32))))
                continue
            rows = self._gather_bucket(messages, groups, idxs, n)
            x3 = ops.reshape(rows, (n, B, h))
            cat = ops.concat(_pna_blocks(x3, n, self.delta), axis=-1)
            out = ops.add(ops.matmul(cat, self.proj_w), self.proj_b)
            pieces.append((idxs, out))
            stats.note(n, B, n - 1, 1 if n > 1 else 0)
        return self._assemble(len(groups), pieces, h, messages.data.dtype)


class RecurrentAggregator(_BaseAggregator):
    def __init__(self, config: AggregatorConfig):
        super().__init__(config)
        self.cell: GruCellParams | None = None
        self.initial_state: Tensor | None = None

    def init_params(self, store, prng, prefix="agg"):
        h = self.config.hidden_dim
        self.cell = GruCellParams.create(store, f"{prefix}.cell", h, prng)
        self.initial_state = store.create(f"{prefix}.initial_state", (h,), "small-normal", prng)

    def bind_params(self, store, prefix="agg"):
        self.cell = GruCellParams.from_store(store, f"{prefix}.cell")
        self.initial_state = store[f"{prefix}.initial_state"]

    def aggregate_grouped(self, messages, groups, acc=None, prng=None):
        if self.cell is None:
            raise ValueError("gru aggregator has no parameters bound")
        self.last_stats = stats = AggStats()
        pieces = []
        for n, idxs in sorted(self._buckets(groups).items()):
            B = len(idxs)
            if n == 0:
                pieces.append((idxs, _broadcast_state(self.initial_state, B)))
                continue
            rows = self._gather_bucket(messages, groups, idxs, n)
            out = _recurrent_forward(rows, B, n, self.cell, self.initial_state, self.config, acc, stats, prng)
            pieces.append((idxs, out))
        return self._assemble(len(groups), pieces, self.config.hidden_dim, messages.data.dtype)


class TreeAggregator(_BaseAggregator):
    def __init__(self, config: AggregatorConfig, operator=None):
        super().__init__(config)
        self.cell: GruCellParams | None = None
        self.identity: Tensor | None = None
        self._operator = operator  # replaces the learned operator when given

    def init_params(self, store, prng, prefix="agg"):
        h = self.config.hidden_dim
        self.cell = GruCellParams.create(store, f"{prefix}.cell", h, prng)
        self.identity = store.create(f"{prefix}.identity", (h,), "small-normal", prng)

    def bind_params(self, store, prefix="agg"):
        self.cell = GruCellParams.from_store(store, f"{prefix}.cell")
        self.identity = store[f"{prefix}.identity"]

    def operator(self):
        if self._operator is not None:
            return self._operator
        if self.cell is None:
            raise ValueError("binary-gru aggregator has no parameters bound")
        return BinaryGruOperator(self.cell)

    def aggregate_grouped(self, messages, groups, acc=None, prng=None):
        self.last_stats = stats = AggStats()
        op = self.operator()
        pieces = []
        for n, idxs in sorted(self._buckets(groups).items()):
            B = len(idxs)
            if n == 0:
                if self.identity is None:
                    raise ValueError("empty multiset needs an identity element")
                pieces.append((idxs, _broadcast_state(self.identity, B)))
                continue
            rows = self._gather_bucket(messages, groups, idxs, n)
            out = _tree_forward(rows, B, n, op, self.config, acc, stats, self.identity)
            pieces.append((idxs, out))
        return self._assemble(len(groups), pieces, self.config.hidden_dim, messages.data.dtype)


def build_aggregator(config: AggregatorConfig, delta: float = math.log(2.0)) -> _BaseAggregator:
    config.validate()
    if config.kind in ("sum", "max", "mean"):
        return FixedAggregator(config)
    if config.kind == "pna-lite":
        return PnaLiteAggregator(config, delta=delta)
    if config.kind == "gru":
        return RecurrentAggregator(config)
    return TreeAggregator(config)


# --------------------------------------------------- spec-level conveniences


def _as_matrix(messages, h: int | None = None) -> Tensor:
    if isinstance(messages, Tensor):
        return messages
    if len(messages) == 0:
        if h is None:
            raise ValueError("empty message list without a hidden width")
        return Tensor(np.zeros((0, h), dtype=np.float32))
    if all(isinstance(m, Tensor) for m in messages):
        return ops.stack_rows(list(messages))
    return Tensor(np.stack([np.asarray(m, dtype=np.float32) for m in messages], axis=0))


def recurrent_aggregate(
    messages,
    cell: GruCellParams,
    initial_state: Tensor,
    config: AggregatorConfig,
    acc: RegLossAccumulator | None = None,
    prng: Prng | None = None,
) -> tuple[Tensor, RegLossAccumulator, AggStats]:
    """Left fold over the message list; empty input returns the initial state."""
    acc = acc if acc is not None else RegLossAccumulator()
    agg = RecurrentAggregator(config)
    agg.cell = cell
    agg.initial_state = initial_state
    mat = _as_matrix(messages, config.hidden_dim)
    out = agg.aggregate(mat, acc=acc, prng=prng)
    return out, acc, agg.last_stats


def tree_aggregate(
    messages,
    cell: GruCellParams | None,
    identity: Tensor | None,
    config: AggregatorConfig,
    acc: RegLossAccumulator | None = None,
    operator=None,
    prng: Prng | None = None,
) -> tuple[Tensor, RegLossAccumulator, AggStats]:
    """Balanced-tree fold of the binary operator; empty input returns the
    learned identity element."""
    acc = acc if acc is not None else RegLossAccumulator()
    agg = TreeAggregator(config, operator=operator)
    agg.cell = cell
    agg.identity = identity
    mat = _as_matrix(messages, config.hidden_dim)
    out = agg.aggregate(mat, acc=acc, prng=prng)
    return out, acc, agg.last_stats


def fixed_aggregate(messages, kind: str, hidden_dim: int | None = None) -> tuple[Tensor, AggStats]:
    """Exact sum/max/mean reduction in canonical order. Empty input yields a
    zero vector; for max/mean the event is flagged in the stats."""
    mat = _as_matrix(messages, hidden_dim)
    h = mat.data.shape[1]
    config = AggregatorConfig(kind=kind, hidden_dim=h, shuffle=False)
    agg = FixedAggregator(config)
    out = agg.aggregate(mat)
    if kind == "sum" and agg.last_stats.empty_groups:
        agg.last_stats.empty_groups = 0  # zeros are the genuine sum identity
    return out, agg.last_stats


def pna_lite_aggregate(
    messages,
    degree: int,
    delta: float,
    proj_w: Tensor,
    proj_b: Tensor,
) -> tuple[Tensor, AggStats]:
    """Scaled multi-aggregation with a learned projection; ``degree`` is the
    neighborhood size used by the scalers (normally len(messages))."""
    mat = _as_matrix(messages)
    n, h = mat.data.shape
    if degree < 1:
        raise ValueError("pna_lite_aggregate: degree must be >= 1")
    config = AggregatorConfig(kind="pna-lite", hidden_dim=h, shuffle=False)
    agg = PnaLiteAggregator(config, delta=delta)
    agg.proj_w = proj_w
    agg.proj_b = proj_b
    stats = AggStats()
    x3 = ops.reshape(mat, (n, 1, h))
    cat = ops.concat(_pna_blocks(x3, degree, delta), axis=-1)
    out = ops.add(ops.matmul(cat, proj_w), proj_b)
    stats.note(n, 1, n - 1, 1 if n > 1 else 0)
    agg.last_stats = stats
    return ops.reshape(out, (-1,)), stats


def shuffle_batch(batch: list, prng: Prng) -> list:
    """Independent uniform permutation of the elements of each sample.

    Samples are sequences (lists or arrays indexed along axis 0); the returned
    list holds permuted copies. Applied to learnable-aggregator inputs during
    training; evaluation runs unshuffled unless explicitly requested.
    """
    out = []
    for sample in batch:
        n = len(sample)
        perm = prng.permutation(n)
        if isinstance(sample, np.ndarray):
            out.append(sample[np.asarray(perm, dtype=np.intp)])
        else:
            out.append([sample[i] for i in perm])
    return out
