"""Exact probabilities of small shapes under the geometric tree law.

Everything here is sampling-free.  With rational parameters all arithmetic
is done in :class:`fractions.Fraction`, so identities hold exactly.

The law of a tree factorizes over its branches.  Walking a branch of order
``k`` from the root side, each vertex either carries a side subtree (the
child of lower order) or is the terminal split into two order-``k-1``
subtrees.  The side sequence is therefore read off the shape itself; the
only non-plane multiplicity is a factor 2 at terminal splits whose two
subtrees differ.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb

from .params import TokunagaParams, side_order_distribution
from .shapes import ShapeDistribution
from .tree import PreconditionError, Tree, canonical_code, compute_orders, prune, vertex_codes


class EnumerationBudgetError(RuntimeError):
    pass


class _Law:
    """Cached exact (or float) quantities for one parameter set."""

    def __init__(self, params: TokunagaParams):
        self.params = params
        self.exact = params.exact
        self.one = Fraction(1) if self.exact else 1.0
        self._S = params.cumsums(1)
        self._side = {}

    def S(self, k):
        while len(self._S) <= k:
            self._S.append(self._S[-1] + self.params.coef(len(self._S)))
        return self._S[k]

    def r(self, k):
        """Per-step termination probability of an order-``k`` branch, ``1/S_{k-1}``."""
        return self.one / self.S(k - 1)

    def side(self, k, i):
        if k not in self._side:
            self._side[k] = side_order_distribution(self.params, k)
        return self._side[k][i - 1]

    def order_prob(self, K):
        p = self.params.p
        return p * (1 - p) ** (K - 1)


def _walk(t: Tree, order, v):
    """Decompose the branch starting at ``v``: side vertices and terminal pair."""
    left, right = t.left, t.right
    sides = []
    u = v
    while left[u] >= 0:
        a, b = int(left[u]), int(right[u])
        if order[a] == order[b]:
            return sides, (a, b)
        if order[a] < order[b]:
            sides.append(a)
            u = b
        else:
            sides.append(b)
            u = a
    return sides, None


def _branch_measure(law, t, order, codes, v):
    k = int(order[v])
    if k == 1:
        return law.one
    sides, terminal = _walk(t, order, v)
    r = law.r(k)
    m = len(sides)
    if m and r == 1:
        return 0 * law.one
    prob = r * (1 - r) ** m
    for s in sides:
        prob *= law.side(k, int(order[s])) * _branch_measure(law, t, order, codes, s)
    a, b = terminal
    sym = 1 if codes[a] == codes[b] else 2
    return prob * sym * _branch_measure(law, t, order, codes, a) * _branch_measure(law, t, order, codes, b)


def exact_measure(t: Tree, params: TokunagaParams):
    """Probability that a geometric tree has the shape of ``t``."""
    law = _Law(params)
    ot = compute_orders(t)
    K = ot.tree_order
    if K == 0:
        raise PreconditionError("the empty tree has no mass under the tree law")
    codes = vertex_codes(t)
    return law.order_prob(K) * _branch_measure(law, t, ot.order, codes, t.progenitor)


class ExactMeasure:
    """Memoized :func:`exact_measure` keyed by canonical code."""

    def __init__(self, params: TokunagaParams):
        self.params = params
        self.cache = {}

    def __call__(self, t) -> object:
        code = t if isinstance(t, str) else canonical_code(t)
        if code not in self.cache:
            tree = Tree.from_code(code) if isinstance(t, str) else t
            self.cache[code] = exact_measure(tree, self.params)
        return self.cache[code]


def order_conditional_measure(t: Tree, params: TokunagaParams):
    """Probability of the shape of ``t`` given the tree order."""
    law = _Law(params)
    ot = compute_orders(t)
    if ot.tree_order == 0:
        raise PreconditionError("empty tree has no order-conditional law")
    return _branch_measure(law, t, ot.order, vertex_codes(t), t.progenitor)


def gw_measure(t: Tree) -> Fraction:
    """Planted critical binary Galton-Watson probability of the shape of ``t``.

    Each non-root vertex contributes 1/2 (leaf or binary split), times the
    number of plane embeddings of the shape.
    """
    if t.is_empty:
        return Fraction(0)
    codes = vertex_codes(t)
    left, right = t.left.tolist(), t.right.tolist()
    asym = sum(1 for v in range(1, len(left)) if left[v] >= 0 and codes[left[v]] != codes[right[v]])
    return Fraction(2**asym, 2 ** (t.n_vertices - 1))


# ----------------------------------------------------------------------
# enumeration of shapes


def _chain_code(sides, terminal_code):
    code = terminal_code
    for s in reversed(sides):
        code = f"({s},{code})" if s <= code else f"({code},{s})"
    return code


def enumerate_trees(max_order: int, max_side: int, params: TokunagaParams, budget: int = 2_000_000) -> ShapeDistribution:
    """All shapes of order ``<= max_order`` whose branches carry at most
    ``max_side`` side branches, with exact masses.

    ``tail`` on the result is the missing mass, computed independently of
    the enumeration from the per-order probability that every branch stays
    within ``max_side``.
    """
    if max_order < 1 or max_side < 0:
        raise PreconditionError("need max_order >= 1 and max_side >= 0")
    law = _Law(params)
    by_order = {1: [("L", law.one)]}
    for k in range(2, max_order + 1):
        lower = [s for i in range(1, k) for s in ((c, w, i) for c, w in by_order[i])]
        pairs = len(by_order[k - 1]) * (len(by_order[k - 1]) + 1) // 2
        size = pairs * sum(len(lower) ** m for m in range(max_side + 1))
        if size > budget:
            raise EnumerationBudgetError(f"order {k} would need {size} shapes (budget {budget})")
        r = law.r(k)
        terminals = []
        prev = by_order[k - 1]
        for x in range(len(prev)):
            for y in range(x, len(prev)):
                (ca, wa), (cb, wb) = prev[x], prev[y]
                code = f"({ca},{cb})" if ca <= cb else f"({cb},{ca})"
                terminals.append((code, wa * wb * (1 if x == y else 2)))
        shapes = []
        for m in range(max_side + 1):
            if m and r == 1:
                break
            head = r * (1 - r) ** m
            for seq in itertools.product(lower, repeat=m):
                w = head
                for _, ws, i in seq:
                    w *= law.side(k, i) * ws
                if w == 0:
                    continue
                codes = [c for c, _, _ in seq]
                for tcode, tw in terminals:
                    if tw:
                        shapes.append((_chain_code(codes, tcode), w * tw))
        by_order[k] = shapes
    dist = ShapeDistribution(total=law.one)
    for k in range(1, max_order + 1):
        pk = law.order_prob(k)
        for code, w in by_order[k]:
            dist.mass[code] = pk * w
    dist.tail = law.one - _captured_mass(law, max_order, max_side)
    return dist


def shapes_by_leaves(n_max: int) -> dict:
    """Canonical codes of every shape with ``1..n_max`` leaves, keyed by leaf count."""
    out = {1: ["L"]}
    for n in range(2, n_max + 1):
        codes = []
        for a in range(1, n // 2 + 1):
            for x in out[a]:
                for y in out[n - a]:
                    lo, hi = (x, y) if x <= y else (y, x)
                    codes.append(f"({lo},{hi})")
        out[n] = sorted(set(codes))
    return out


def _captured_mass(law, max_order, max_side):
    f = {1: law.one}
    for k in range(2, max_order + 1):
        r = law.r(k)
        g = sum((law.side(k, i) * f[i] for i in range(1, k)), 0 * law.one) if r != 1 else 0 * law.one
        within = sum((r * (1 - r) ** m * g**m for m in range(max_side + 1)), 0 * law.one)
        f[k] = within * f[k - 1] ** 2
    return sum((law.order_prob(k) * f[k] for k in range(1, max_order + 1)), 0 * law.one)


# ----------------------------------------------------------------------
# pruning preimages


def _poly_mul(a, b, n):
    out = [0 * a[0]] * (n + 1)
    for i, x in enumerate(a):
        if not x:
            continue
        for j in range(min(len(b), n + 1 - i)):
            out[i + j] += x * b[j]
    return out


def _branch_preimage_series(law, t, order, codes, v, n):
    """Power series (in the number of inserted order-1 leaves) of the
    order-(k+1) branch law summed over preimages of the branch at ``v``."""
    k = int(order[v])
    zero = 0 * law.one
    r = law.r(k + 1)
    if k == 1:
        sides, terminal = [], None
    else:
        sides, terminal = _walk(t, order, v)
    m = len(sides)
    if r == 1:
        if m:
            return [zero] * (n + 1)
        y = zero
    else:
        y = (1 - r) * law.side(k + 1, 1)
    const = r * (1 - r) ** m
    for s in sides:
        const *= law.side(k + 1, int(order[s]) + 1)
    # interleavings of M new leaves with the m existing sides: C(M + m, m)
    series = [const * comb(M + m, m) * y**M for M in range(n + 1)]
    for s in sides:
        series = _poly_mul(series, _branch_preimage_series(law, t, order, codes, s, n), n)
    if terminal is not None:
        a, b = terminal
        sa = _branch_preimage_series(law, t, order, codes, a, n)
        if codes[a] == codes[b]:
            series = _poly_mul(series, _poly_mul(sa, sa, n), n)
        else:
            sb = _branch_preimage_series(law, t, order, codes, b, n)
            series = _poly_mul(series, [2 * x for x in _poly_mul(sa, sb, n)], n)
    return series


def pruned_mass_series(t: Tree, params: TokunagaParams, n: int) -> list:
    """Mass of the preimages of ``t`` with exactly ``0..n`` extra leaves.

    Entry ``j`` is the total geometric-law probability of all trees ``t'``
    with ``prune(t') = t`` that have ``j`` more order-1 side branches than
    the minimal preimage.  For the empty tree the only preimage of positive
    mass is the single edge.
    """
    law = _Law(params)
    if t.is_empty:
        return [law.order_prob(1)] + [0 * law.one] * n
    ot = compute_orders(t)
    codes = vertex_codes(t)
    series = _branch_preimage_series(law, t, ot.order, codes, t.progenitor, n)
    pk = law.order_prob(ot.tree_order + 1)
    return [pk * x for x in series]


def _series_rates(law, t, ot):
    """Largest per-leaf rate and number of insertion slots (edges)."""
    y_max = 0 * law.one
    for k in set(ot.branch_table.order.tolist()):
        r = law.r(k + 1)
        if r != 1:
            y_max = max(y_max, (1 - r) * law.side(k + 1, 1))
    return y_max, t.n_vertices - 1


def _binomial_tail(y, d, n):
    """Upper bound on sum_{j > n} C(j + d - 1, d - 1) y**j, or None if the
    terms are not yet decreasing geometrically."""
    if y == 0:
        return 0 * y
    j = n + 1
    term = comb(j + d - 1, d - 1) * y**j
    ratio = y * (j + d) / (j + 1)
    if ratio >= 1:
        return None
    return term / (1 - ratio)


@dataclass(frozen=True)
class PrunedMass:
    value: object  # partial sum over preimages with <= n_extra inserted leaves
    tail: object  # certified bound on the remaining mass
    n_extra: int


def exact_pruned_mass(t: Tree, params: TokunagaParams, tol=Fraction(1, 10**12), max_terms: int = 2000) -> PrunedMass:
    """Probability that pruning a geometric tree yields the shape of ``t``.

    Preimages are summed in increasing number of inserted leaves until the
    certified tail drops below ``tol``.
    """
    law = _Law(params)
    if t.is_empty:
        return PrunedMass(law.order_prob(1), 0 * law.one, 0)
    ot = compute_orders(t)
    y, d = _series_rates(law, t, ot)
    if y == 0:
        return PrunedMass(pruned_mass_series(t, params, 0)[0], 0 * law.one, 0)
    n = 16
    while True:
        bound = _binomial_tail(y, d, n)
        if bound is not None:
            series = pruned_mass_series(t, params, n)
            tail = series[0] * bound
            if tail <= tol:
                return PrunedMass(sum(series), tail, n)
        if n >= max_terms:
            raise EnumerationBudgetError(f"tail not below {tol} after {n} extra leaves")
        n = min(2 * n, max_terms)


def enumerate_preimages(t: Tree, max_extra: int) -> dict:
    """Brute-force list of distinct trees ``t'`` with ``prune(t') = t``.

    Every edge of ``t`` may be subdivided by vertices carrying a new leaf
    (at most ``max_extra`` in total) and every leaf of ``t`` gains two leaf
    children.  Returns ``{code: (tree, n_extra)}``.
    """
    target = canonical_code(t)
    if t.is_empty:
        return {"L": (Tree.single_edge(), 0)}
    left, right = t.left.tolist(), t.right.tolist()
    n_edges = len(left) - 1
    out = {}
    for total in range(max_extra + 1):
        for cuts in itertools.combinations(range(total + n_edges - 1), n_edges - 1):
            counts = [b - a - 1 for a, b in zip((-1,) + cuts, cuts + (total + n_edges - 1,))]
            tree = _expand(left, right, counts)
            code = canonical_code(tree)
            if code in out:
                continue
            if canonical_code(prune(tree)) != target:
                raise AssertionError("constructed tree is not a preimage")
            out[code] = (tree, total)
    return out


def _expand(left, right, counts):
    """Subdivide edge into vertex ``v`` (index v-1 in counts) with leafy vertices."""
    parent = [-1]

    def new(p):
        parent.append(p)
        return len(parent) - 1

    # preorder over t keeps parent ids below child ids
    stack = [(left[0], 0)]
    while stack:
        v, p = stack.pop()
        for _ in range(counts[v - 1]):
            p = new(p)
            new(p)  # inserted order-1 side leaf
        u = new(p)
        if left[v] < 0:
            new(u)
            new(u)
        else:
            stack.append((right[v], u))
            stack.append((left[v], u))
    return Tree.from_parent(parent)


# ----------------------------------------------------------------------
# prune invariance check


@dataclass(frozen=True)
class InvarianceRow:
    code: str
    mu: object
    nu: object
    tail: object
    discrepancy: float
    allowed: float

    @property
    def ok(self) -> bool:
        return self.discrepancy <= self.allowed


def prune_invariance_check(params: TokunagaParams, max_order=2, max_side=2, tol=1e-9, series_tol=Fraction(1, 10**13)):
    """Compare ``nu(t | t != empty)`` with ``mu(t)`` on every enumerated shape."""
    shapes = enumerate_trees(max_order, max_side, params)
    nu_empty = exact_pruned_mass(Tree.empty(), params).value
    norm = 1 - nu_empty
    rows = []
    for code in sorted(shapes.mass, key=lambda c: (len(c), c)):
        t = Tree.from_code(code)
        mu = exact_measure(t, params)
        pm = exact_pruned_mass(t, params, tol=series_tol)
        lo = pm.value / norm
        hi = (pm.value + pm.tail) / norm
        disc = float(max(abs(lo - mu), abs(hi - mu)))
        rows.append(InvarianceRow(code, mu, pm.value, pm.tail, disc, tol + float(pm.tail / norm)))
    return rows
