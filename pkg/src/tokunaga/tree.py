"""Planted reduced binary trees, Horton-Strahler orders and Horton pruning.

A tree is stored as two child arrays ``left`` / ``right`` indexed by vertex
id, with ``-1`` marking an absent child.  Vertex ``0`` is always the root,
and ids are topologically ordered: a parent id is smaller than the ids of its
children.  The root carries at most one child (the progenitor), every other
vertex has zero or two children.  The empty tree is a lone root.

Trees are immutable; derived annotations (orders, branches) live in
:class:`OrderedTree`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class StructuralError(ValueError):
    """Raised for arenas that violate the planted reduced binary invariants."""


class PreconditionError(ValueError):
    """Raised when an operation is called outside its domain."""


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


class Tree:
    """Planted, reduced, unlabeled binary tree.

    Parameters
    ----------
    left, right : array_like of int
        Child ids per vertex, ``-1`` where the child is absent.
    validate : bool
        Check all structural invariants (cheap, vectorized).
    """

    __slots__ = ("left", "right", "parent", "_levels")

    def __init__(self, left, right, validate=True):
        left = np.asarray(left, dtype=np.int64)
        right = np.asarray(right, dtype=np.int64)
        if validate:
            parent = _check_arena(left, right)
        else:
            parent = _parents_of(left, right)
        self.left = _frozen(left)
        self.right = _frozen(right)
        self.parent = _frozen(parent)
        self._levels = None

    # -- constructors ---------------------------------------------------
    @classmethod
    def from_parent(cls, parent, validate=True) -> "Tree":
        """Build a tree from a parent array (``parent[0] == -1``)."""
        parent = np.asarray(parent, dtype=np.int64)
        n = parent.size
        if n == 0 or parent[0] != -1:
            raise StructuralError("vertex 0 must be the root (parent -1)")
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        if n > 1:
            ids = np.arange(1, n)
            par = parent[1:]
            if validate and (par.min() < 0 or np.any(par >= ids)):
                raise StructuralError("parent ids must precede child ids")
            srt = np.argsort(par, kind="stable")
            p_sorted = par[srt]
            c_sorted = ids[srt]
            second = np.zeros(srt.size, dtype=bool)
            second[1:] = p_sorted[1:] == p_sorted[:-1]
            third = np.zeros(srt.size, dtype=bool)
            third[2:] = p_sorted[2:] == p_sorted[:-2]
            if np.any(third):
                raise StructuralError("vertex with more than two children")
            left[p_sorted[~second]] = c_sorted[~second]
            right[p_sorted[second]] = c_sorted[second]
        return cls(left, right, validate=validate)

    @classmethod
    def empty(cls) -> "Tree":
        return cls([-1], [-1])

    @classmethod
    def single_edge(cls) -> "Tree":
        return cls([1, -1], [-1, -1])

    @classmethod
    def cherry(cls) -> "Tree":
        return cls([1, 2, -1, -1], [-1, 3, -1, -1])

    @classmethod
    def skeleton(cls, depth: int) -> "Tree":
        """Planted perfect binary tree whose leaves all sit at ``depth``."""
        if depth < 0:
            raise PreconditionError("depth must be non-negative")
        if depth == 0:
            return cls.empty()
        n = 2**depth  # root + (2**depth - 1) heap-ordered vertices
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        left[0] = 1
        internal = np.arange(1, 2 ** (depth - 1))
        left[internal] = 2 * internal
        right[internal] = 2 * internal + 1
        return cls(left, right, validate=False)

    @classmethod
    def from_code(cls, code: str) -> "Tree":
        """Inverse of :func:`canonical_code` (any child order is accepted)."""
        if code == "":
            return cls.empty()
        parent = [-1]
        stack = [0]
        expect_child = True
        # Preorder construction keeps ids topologically sorted.
        for i, ch in enumerate(code):
            if ch == "(" or ch == "L":
                if not expect_child:
                    raise StructuralError(f"unexpected {ch!r} at position {i}")
                v = len(parent)
                parent.append(stack[-1])
                if ch == "(":
                    stack.append(v)
                else:
                    expect_child = False
            elif ch == ",":
                if expect_child or len(stack) == 1:
                    raise StructuralError(f"unexpected ',' at position {i}")
                expect_child = True
            elif ch == ")":
                if len(stack) == 1:
                    raise StructuralError(f"unbalanced ')' at position {i}")
                stack.pop()
                expect_child = False
            else:
                raise StructuralError(f"bad character {ch!r} at position {i}")
        if len(stack) != 1:
            raise StructuralError("unbalanced '(' in code")
        return cls.from_parent(parent)

    # -- basic queries --------------------------------------------------
    root = 0

    @property
    def n_vertices(self) -> int:
        return int(self.left.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.left[1:] < 0))

    @property
    def is_empty(self) -> bool:
        return self.left.size == 1

    @property
    def progenitor(self) -> int:
        """Child of the root; ``-1`` for the empty tree."""
        return int(self.left[0])

    def children(self, v: int) -> tuple[int, ...]:
        return tuple(int(c) for c in (self.left[v], self.right[v]) if c >= 0)

    def levels(self) -> list[np.ndarray]:
        """Vertex ids grouped by depth, root level first."""
        if self._levels is None:
            levels = []
            front = np.zeros(1, dtype=np.int64)
            while front.size:
                levels.append(front)
                kids = np.concatenate((self.left[front], self.right[front]))
                front = kids[kids >= 0]
            self._levels = levels
        return self._levels

    def depth(self) -> np.ndarray:
        d = np.empty(self.n_vertices, dtype=np.int64)
        for k, lev in enumerate(self.levels()):
            d[lev] = k
        return d

    def swapped(self, vertices) -> "Tree":
        """Copy with left/right children exchanged at ``vertices``."""
        left = self.left.copy()
        right = self.right.copy()
        v = np.asarray(vertices, dtype=np.int64)
        v = v[right[v] >= 0]
        left[v], right[v] = right[v], left[v].copy()
        return Tree(left, right, validate=False)

    def __repr__(self) -> str:
        return f"Tree(n_vertices={self.n_vertices}, n_leaves={self.n_leaves})"


def _parents_of(left, right):
    n = left.size
    parent = np.full(n, -1, dtype=np.int64)
    ids = np.arange(n)
    has_l = left >= 0
    has_r = right >= 0
    parent[left[has_l]] = ids[has_l]
    parent[right[has_r]] = ids[has_r]
    return parent


def _check_arena(left, right):
    n = left.size
    if left.ndim != 1 or right.shape != left.shape or n == 0:
        raise StructuralError("child arrays must be 1-d, equal length, non-empty")
    if left.min() < -1 or right.min() < -1 or left.max() >= n or right.max() >= n:
        raise StructuralError("dangling child id")
    if right[0] >= 0:
        raise StructuralError("root must have at most one child")
    if n > 1 and left[0] < 0:
        raise StructuralError("non-empty arena with a childless root")
    inner = slice(1, None)
    if np.any((left[inner] >= 0) != (right[inner] >= 0)):
        raise StructuralError("non-root vertex with exactly one child (not reduced)")
    kids = np.concatenate((left[left >= 0], right[right >= 0]))
    if kids.size != n - 1 or np.any(np.bincount(kids, minlength=n)[1:] != 1) or np.any(kids == 0):
        raise StructuralError("every non-root vertex must have exactly one parent")
    ids = np.arange(n)
    if np.any(left[left >= 0] <= ids[left >= 0]) or np.any(right[right >= 0] <= ids[right >= 0]):
        raise StructuralError("child ids must exceed parent ids")
    return _parents_of(left, right)


# ----------------------------------------------------------------------
# Orders and branches


@dataclass(frozen=True)
class Branch:
    order: int
    vertex_path: tuple[int, ...]
    side_branch_orders: tuple[int, ...]

    @property
    def n_edges(self) -> int:
        return len(self.vertex_path)


@dataclass(frozen=True)
class BranchStatistics:
    """Branch counts ``N[j]`` and side-branch counts ``N_side[(i, j)]``."""

    N: dict = field(default_factory=dict)
    N_side: dict = field(default_factory=dict)

    def __add__(self, other: "BranchStatistics") -> "BranchStatistics":
        N = dict(self.N)
        for j, v in other.N.items():
            N[j] = N.get(j, 0) + v
        side = dict(self.N_side)
        for ij, v in other.N_side.items():
            side[ij] = side.get(ij, 0) + v
        return BranchStatistics(N, side)


class OrderedTree:
    """A tree annotated with Horton-Strahler orders.

    ``order[v]`` is the order of vertex ``v`` (equivalently of its parental
    edge); ``order[0]`` is the order of the whole tree.
    """

    def __init__(self, tree: Tree, order: np.ndarray):
        self.tree = tree
        order = np.asarray(order, dtype=np.int64)
        order.flags.writeable = False
        self.order = order

    @property
    def tree_order(self) -> int:
        return int(self.order[0])

    def order_of(self, v: int) -> int:
        return int(self.order[v])

    @cached_property
    def _branch_arrays(self):
        t = self.tree
        n = t.n_vertices
        o = self.order
        par = t.parent
        is_start = np.zeros(n, dtype=bool)
        is_start[0] = True
        if n > 1:
            nr = np.arange(1, n)
            is_start[nr] = (par[nr] == 0) | (o[par[nr]] != o[nr])
        head = np.where(is_start, np.arange(n), par)
        head[0] = 0
        done = is_start.copy()
        while not done.all():
            nd = np.flatnonzero(~done)
            a = head[nd]
            head[nd] = head[a]
            done[nd] = done[a]
        starts = np.flatnonzero(is_start[1:]) + 1
        # side branch: start vertex whose sibling has a strictly higher order
        p = par[starts]
        sib = t.left[p] + t.right[p] - starts
        side = np.zeros(starts.size, dtype=bool)
        ok = p > 0
        side[ok] = o[starts[ok]] < o[sib[ok]]
        return head, starts, side

    @property
    def branch_heads(self) -> np.ndarray:
        """Top vertex of every branch, in topological order."""
        return self._branch_arrays[1]

    @cached_property
    def branch_table(self) -> "BranchTable":
        head, starts, side = self._branch_arrays
        o = self.order
        nb = starts.size
        index = np.full(self.tree.n_vertices, -1, dtype=np.int64)
        index[starts] = np.arange(nb)
        vertex_branch = index[head]
        vertex_branch[0] = -1
        n_edges = np.bincount(vertex_branch[1:], minlength=nb) if nb else np.zeros(0, np.int64)
        side_starts = starts[side]
        host = vertex_branch[self.tree.parent[side_starts]]
        return BranchTable(
            head=starts,
            order=o[starts],
            n_edges=n_edges,
            vertex_branch=vertex_branch,
            side_head=side_starts,
            side_order=o[side_starts],
            side_host=host,
        )

    @cached_property
    def branches(self) -> list[Branch]:
        bt = self.branch_table
        nb = bt.head.size
        paths = [[] for _ in range(nb)]
        for v, b in enumerate(bt.vertex_branch.tolist()):
            if b >= 0:
                paths[b].append(v)
        sides = [[] for _ in range(nb)]
        # side heads sorted by attachment vertex id = root-side first
        attach = self.tree.parent[bt.side_head]
        for k in np.argsort(attach, kind="stable").tolist():
            sides[int(bt.side_host[k])].append(int(bt.side_order[k]))
        return [
            Branch(int(bt.order[b]), tuple(paths[b]), tuple(sides[b]))
            for b in range(nb)
        ]


@dataclass(frozen=True)
class BranchTable:
    """Vectorized branch decomposition (one row per branch)."""

    head: np.ndarray
    order: np.ndarray
    n_edges: np.ndarray
    vertex_branch: np.ndarray
    side_head: np.ndarray
    side_order: np.ndarray
    side_host: np.ndarray

    @property
    def n_sides(self) -> np.ndarray:
        return np.bincount(self.side_host, minlength=self.head.size)

    def side_counts(self, max_order: int | None = None) -> np.ndarray:
        """Matrix ``[branch, i]`` of side branches of order ``i`` per branch."""
        k = int(max_order if max_order is not None else (self.order.max(initial=0)))
        out = np.zeros((self.head.size, k + 1), dtype=np.int64)
        np.add.at(out, (self.side_host, self.side_order), 1)
        return out


def compute_orders(t: Tree) -> OrderedTree:
    """Horton-Strahler orders by the local rule, processed leaves-up by depth."""
    left, right = t.left, t.right
    order = np.zeros(t.n_vertices, dtype=np.int64)
    levels = t.levels()
    for lev in reversed(levels[1:]):
        lk = left[lev]
        leaf = lk < 0
        order[lev[leaf]] = 1
        inner = lev[~leaf]
        if inner.size:
            a = order[left[inner]]
            b = order[right[inner]]
            order[inner] = np.maximum(a, b) + (a == b)
    if t.n_vertices > 1:
        order[0] = order[left[0]]
    return OrderedTree(t, order)


def tree_order(t: Tree) -> int:
    return compute_orders(t).tree_order


def prune(t: Tree) -> Tree:
    """Horton pruning: drop leaves and their edges, then series-reduce."""
    n = t.n_vertices
    if n <= 2:
        return Tree.empty()
    left, right, par = t.left, t.right, t.parent
    leaf = left < 0
    leaf[0] = False
    keep = ~leaf
    nonleaf_kids = np.zeros(n, dtype=np.int64)
    has = left >= 0
    nonleaf_kids[has] += ~leaf[left[has]]
    has = right >= 0
    nonleaf_kids[has] += ~leaf[right[has]]
    series = keep & (nonleaf_kids == 1)
    series[0] = False
    keep &= ~series
    # nearest kept proper ancestor, by pointer doubling
    up = par.copy()
    up[0] = 0
    done = keep[up]
    while not done.all():
        nd = np.flatnonzero(~done)
        a = up[nd]
        up[nd] = up[a]
        done[nd] = done[a]
    new_id = np.cumsum(keep) - 1
    kept = np.flatnonzero(keep)
    new_parent = new_id[up[kept]]
    new_parent[0] = -1
    return Tree.from_parent(new_parent, validate=False)


def prune_trajectory(t: Tree) -> list[Tree]:
    out = [t]
    while not out[-1].is_empty:
        out.append(prune(out[-1]))
    return out


def order_by_pruning(t: Tree) -> int:
    """Order as the minimal number of prunings that erase ``t``."""
    return len(prune_trajectory(t)) - 1


def branch_statistics(ot: OrderedTree) -> BranchStatistics:
    bt = ot.branch_table
    N = {}
    if bt.order.size:
        for j, c in enumerate(np.bincount(bt.order).tolist()):
            if c:
                N[j] = c
    side = {}
    if bt.side_head.size:
        host_order = bt.order[bt.side_host]
        k = int(host_order.max()) + 1
        flat = np.bincount(bt.side_order * k + host_order)
        for idx in np.flatnonzero(flat).tolist():
            side[(idx // k, idx % k)] = int(flat[idx])
    return BranchStatistics(N, side)


def vertex_codes(t: Tree) -> list[str]:
    """Canonical code of the subtree below every non-root vertex."""
    left = t.left.tolist()
    right = t.right.tolist()
    codes = [""] * len(left)
    for v in range(len(left) - 1, 0, -1):
        a = left[v]
        if a < 0:
            codes[v] = "L"
        else:
            x, y = codes[a], codes[right[v]]
            codes[v] = f"({x},{y})" if x <= y else f"({y},{x})"
    return codes


def canonical_code(t: Tree) -> str:
    """Isomorphism-invariant code: leaf ``L``, internal ``(a,b)`` with a <= b."""
    if t.is_empty:
        return ""
    return vertex_codes(t)[t.progenitor]


def descendant_subtree(t: Tree | OrderedTree, v: int) -> Tree:
    """Planted subtree made of ``v``, its descendants and ``v``'s parental edge."""
    if isinstance(t, OrderedTree):
        t = t.tree
    n = t.n_vertices
    if not 0 < v < n:
        raise PreconditionError(f"unknown (or root) vertex id {v}")
    members = [np.array([v], dtype=np.int64)]
    front = members[0]
    while front.size:
        kids = np.concatenate((t.left[front], t.right[front]))
        front = kids[kids >= 0]
        members.append(front)
    sub = np.sort(np.concatenate(members))
    new_id = np.full(n, -1, dtype=np.int64)
    new_id[sub] = np.arange(1, sub.size + 1)
    parent = np.empty(sub.size + 1, dtype=np.int64)
    parent[0] = -1
    parent[1:] = new_id[t.parent[sub]]
    parent[1] = 0
    return Tree.from_parent(parent, validate=False)


def principal_subtrees(t: Tree, rng: np.random.Generator) -> tuple[Tree, Tree]:
    """The two subtrees hanging from the progenitor, in uniformly random order."""
    if t.n_vertices <= 2:
        raise PreconditionError("principal subtrees need a tree of order > 1")
    u = t.progenitor
    a = descendant_subtree(t, int(t.left[u]))
    b = descendant_subtree(t, int(t.right[u]))
    if rng.random() < 0.5:
        a, b = b, a
    return a, b
