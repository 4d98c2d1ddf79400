"""Random geometric trees.

Two independent constructions of the same law are provided:

* :func:`generate_recursive` builds a skeleton of geometric depth and hangs
  side branches on every branch (branch-by-branch construction).
* :func:`generate_process` runs the discrete-time population in which each
  member of order ``K`` terminates with probability ``1/S_{K-1}`` per step.

Both are batched: a whole ensemble is grown at once, level by level, and
split into individual :class:`~tokunaga.tree.Tree` objects at the end.
:func:`generate_gw_planted` is a plain critical binary Galton-Watson sampler
used as a reference.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .params import ParameterError, TokunagaParams, side_order_distribution
from .shapes import ShapeDistribution, shapes_of
from .tree import Tree, canonical_code

DEFAULT_MAX_VERTICES = 10_000_000
CHUNK = 4096
BATCH_VERTICES = 2_000_000

KIND_LEAF = 0  # order-1 member terminates, no offspring
KIND_SPLIT = 1  # order-K member terminates into two order-(K-1) members
KIND_SIDE = 2  # member survives and emits a side branch


class GenerationAborted(RuntimeError):
    """A tree exceeded the vertex budget."""


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("TOKUNAGA_THREADS", "1")))
    except ValueError:
        return 1


# ----------------------------------------------------------------------
# scalar helpers


def geom_sample(r, rng: np.random.Generator, size=None):
    """Draw from Geom(r) on {0, 1, ...}: ``P(X = k) = r (1 - r)**k``.

    Inverse transform ``floor(log(u) / log(1 - r))`` with ``u`` in (0, 1].
    """
    r = float(r)
    if not 0 < r <= 1:
        raise ParameterError(f"geometric parameter must lie in (0, 1], got {r}")
    if r == 1:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    u = 1.0 - rng.random(size)
    x = np.floor(np.log(u) / np.log1p(-r))
    if size is None:
        return int(x)
    return x.astype(np.int64)


def thinned_geometric_param(r, q):
    """Parameter of Geom(r) after keeping each unit independently with prob ``q``."""
    if not 0 < r <= 1:
        raise ParameterError("r must lie in (0, 1]")
    if not 0 <= q <= 1:
        raise ParameterError("q must lie in [0, 1]")
    return r / (q * (1 - r) + r)


def sample_order(params: TokunagaParams, rng, size=None):
    """Tree order ``1 + Geom(p)``."""
    return 1 + geom_sample(params.p, rng, size)


class _Tables:
    """Float lookup tables for a parameter set, grown on demand."""

    def __init__(self, params: TokunagaParams, kmax=64):
        self.params = params
        self.S = [1.0]
        self._side = {}
        self.S_of(kmax)
        for K in range(2, kmax + 1):
            if self.S[K - 1] > 1:
                self.side(K)

    def S_of(self, k):
        while len(self.S) <= k:
            self.S.append(self.S[-1] + float(self.params.coef(len(self.S))))
        return self.S[k]

    def side(self, K):
        if K not in self._side:
            self._side[K] = np.array([float(x) for x in side_order_distribution(self.params, K)])
        return self._side[K]

    def expected_vertices(self, K):
        """Mean vertex count of an order-``K`` tree (used for batch sizing)."""
        if not hasattr(self, "_ev"):
            self._ev = {}
        if K not in self._ev:
            N = np.zeros(K + 1)
            N[K] = 1.0
            T = [0.0] + [float(self.params.coef(k)) for k in range(1, K + 1)]
            for i in range(K - 1, 0, -1):
                N[i] = 2 * N[i + 1] + sum(N[k] * T[k - i] for k in range(i + 1, K + 1))
            edges = N[1] + sum(N[k] * self.S_of(k - 1) for k in range(2, K + 1))
            self._ev[K] = 1.0 + edges
        return self._ev[K]

    def batches(self, orders, budget=BATCH_VERTICES):
        """Split ``orders`` (in draw order) into slices of bounded expected volume."""
        cost = np.array([self.expected_vertices(int(k)) for k in np.unique(orders)])
        lookup = dict(zip(np.unique(orders).tolist(), cost))
        acc = np.cumsum([lookup[k] for k in orders.tolist()])
        cuts = np.searchsorted(acc, np.arange(budget, acc[-1] if acc.size else 0, budget), side="right")
        return np.split(orders, np.unique(cuts))

    def draw_sides(self, K, size, rng):
        probs = self.side(K)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return 1 + np.searchsorted(cdf, rng.random(size), side="right")


# ----------------------------------------------------------------------
# forest assembly


class _Forest:
    """Global vertex arena shared by a batch of trees under construction."""

    def __init__(self, n_trees, max_vertices):
        self.n = n_trees
        self.parent = [np.full(n_trees, -1, dtype=np.int64)]
        self.tree = [np.arange(n_trees, dtype=np.int64)]
        self.next_id = n_trees
        self.count = np.ones(n_trees, dtype=np.int64)
        self.alive = np.ones(n_trees, dtype=bool)
        self.max_vertices = max_vertices

    def charge(self, tids, sizes):
        """Account ``sizes`` new vertices to trees ``tids``; kill trees over budget."""
        add = np.bincount(tids, weights=sizes, minlength=self.n).astype(np.int64)
        self.count += add
        self.alive &= self.count <= self.max_vertices
        return self.alive[tids]

    def add(self, parents, tids):
        ids = np.arange(self.next_id, self.next_id + parents.size, dtype=np.int64)
        self.parent.append(parents)
        self.tree.append(tids)
        self.next_id += parents.size
        return ids

    def split(self):
        """Per-tree :class:`Tree` objects (``None`` for trees over budget)."""
        parent = np.concatenate(self.parent)
        tree = np.concatenate(self.tree)
        gid = np.flatnonzero(self.alive[tree])
        gid = gid[np.argsort(tree[gid], kind="stable")]
        tree = tree[gid]
        sizes = np.bincount(tree, minlength=self.n)
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        pos = np.full(parent.size, -1, dtype=np.int64)
        pos[gid] = np.arange(gid.size)
        # stable sort by parent position keeps siblings in id order
        kids = np.flatnonzero(parent[gid] >= 0)
        ppos = pos[parent[gid[kids]]]
        srt = np.argsort(ppos, kind="stable")
        ppos, kids = ppos[srt], kids[srt]
        second = np.zeros(kids.size, dtype=bool)
        second[1:] = ppos[1:] == ppos[:-1]
        local = kids - starts[tree[kids]]
        left = np.full(gid.size, -1, dtype=np.int64)
        right = np.full(gid.size, -1, dtype=np.int64)
        left[ppos[~second]] = local[~second]
        right[ppos[second]] = local[second]
        out = [None] * self.n
        for t in np.flatnonzero(self.alive).tolist():
            a, b = starts[t], starts[t] + sizes[t]
            out[t] = Tree(left[a:b], right[a:b], validate=False)
        return out


# ----------------------------------------------------------------------
# recursive (skeleton + side branches) construction


def _grow_recursive(tables: _Tables, orders, rng, max_vertices):
    orders = np.asarray(orders, dtype=np.int64)
    n = orders.size
    forest = _Forest(n, max_vertices)
    pending = {}

    def push(k, heads, tids):
        pending.setdefault(int(k), []).append((heads, tids))

    for k in np.unique(orders).tolist():
        sel = np.flatnonzero(orders == k)
        push(k, sel, sel)
    top = int(orders.max()) if n else 0
    for kappa in range(top, 0, -1):
        if kappa not in pending:
            continue
        heads = np.concatenate([h for h, _ in pending[kappa]])
        tids = np.concatenate([t for _, t in pending.pop(kappa)])
        live = forest.alive[tids]
        heads, tids = heads[live], tids[live]
        if not heads.size:
            continue
        if kappa == 1:
            live = forest.charge(tids, np.ones(tids.size))
            forest.add(heads[live], tids[live])
            continue
        m = geom_sample(1.0 / tables.S_of(kappa - 1), rng, heads.size)
        sizes = m + 1
        live = forest.charge(tids, sizes)
        heads, tids, m, sizes = heads[live], tids[live], m[live], sizes[live]
        if not heads.size:
            continue
        total = int(sizes.sum())
        first = forest.next_id + np.cumsum(sizes) - sizes
        parents = np.arange(forest.next_id - 1, forest.next_id - 1 + total, dtype=np.int64)
        parents[first - forest.next_id] = heads
        ids = forest.add(parents, np.repeat(tids, sizes))
        terminal = first + m
        n_side = int(m.sum())
        if n_side:
            is_attach = np.ones(total, dtype=bool)
            is_attach[terminal - ids[0]] = False
            attach = ids[is_attach]
            side_tid = np.repeat(tids, m)
            side_ord = tables.draw_sides(kappa, n_side, rng)
            for i in np.unique(side_ord).tolist():
                sel = side_ord == i
                push(i, attach[sel], side_tid[sel])
        push(kappa - 1, np.repeat(terminal, 2), np.repeat(tids, 2))
    return forest


# ----------------------------------------------------------------------
# population process


@dataclass
class ProcessTimeline:
    """Events of one process run: ``time``, member ``order``, ``kind``,
    ``side_order`` (0 unless ``kind == KIND_SIDE``) and the tree ``vertex``
    at which the event happened (its depth equals ``time``)."""

    time: np.ndarray
    order: np.ndarray
    kind: np.ndarray
    side_order: np.ndarray
    vertex: np.ndarray

    def __len__(self):
        return int(self.time.size)

    def records(self) -> list[dict]:
        names = {KIND_LEAF: "terminate-no-offspring", KIND_SPLIT: "terminate-split", KIND_SIDE: "survive-side-branch"}
        return [
            {"time": int(s), "order": int(k), "kind": names[int(e)], "side_order": int(i) if e == KIND_SIDE else None}
            for s, k, e, i in zip(self.time, self.order, self.kind, self.side_order)
        ]


def _step_members(tables, order, rng):
    """One process step for members of the given orders.

    Returns ``(kind, child_a, child_b)`` per member; children orders are 0
    for order-1 terminations.
    """
    nm = order.size
    top = int(order.max()) if nm else 0
    q = np.array([1.0] + [1.0 / tables.S_of(k - 1) for k in range(1, top + 1)])[order]
    term = rng.random(nm) < q
    kind = np.where(term, np.where(order == 1, KIND_LEAF, KIND_SPLIT), KIND_SIDE)
    a = np.where(term, order - 1, order)
    b = a.copy()
    surv = np.flatnonzero(~term)
    if surv.size:
        so = order[surv]
        for K in np.unique(so).tolist():
            sel = surv[so == K]
            b[sel] = tables.draw_sides(K, sel.size, rng)
    return kind, a, b


def _grow_process(tables: _Tables, orders, rng, max_vertices, record=False):
    orders = np.asarray(orders, dtype=np.int64)
    n = orders.size
    forest = _Forest(n, max_vertices)
    forest.charge(np.arange(n), np.ones(n))
    vert = forest.add(np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64))
    mord = orders.copy()
    mtree = np.arange(n, dtype=np.int64)
    log = []
    s = 0
    while vert.size:
        s += 1
        kind, a, b = _step_members(tables, mord, rng)
        if record:
            log.append((np.full(vert.size, s), mord, kind, np.where(kind == KIND_SIDE, b, 0), vert, mtree))
        grow = kind != KIND_LEAF
        gv, gt = vert[grow], mtree[grow]
        live = forest.charge(gt, np.full(gt.size, 2))
        gv, gt, a, b = gv[live], gt[live], a[grow][live], b[grow][live]
        kids = forest.add(np.repeat(gv, 2), np.repeat(gt, 2))
        vert = kids
        mtree = np.repeat(gt, 2)
        mord = np.column_stack((a, b)).ravel()
    return forest, log


def _timelines(log, n):
    if not log:
        return [None] * n
    cols = [np.concatenate(c) for c in zip(*log)]
    time, order, kind, side, vert, tree = cols
    out = []
    perm = np.argsort(tree, kind="stable")
    tree_sorted = tree[perm]
    bounds = np.searchsorted(tree_sorted, np.arange(n + 1))
    for t in range(n):
        idx = perm[bounds[t]:bounds[t + 1]]
        out.append((time[idx], order[idx], kind[idx], side[idx], vert[idx]))
    return out


# ----------------------------------------------------------------------
# public samplers


def generate_recursive(params: TokunagaParams, rng, order=None, max_vertices=DEFAULT_MAX_VERTICES) -> Tree:
    """One geometric tree by the skeleton-plus-side-branches construction.

    ``order`` forces the tree order (direct conditioning).
    """
    K = sample_order(params, rng) if order is None else int(order)
    forest = _grow_recursive(_Tables(params), [K], rng, max_vertices)
    tree = forest.split()[0]
    if tree is None:
        raise GenerationAborted(f"tree exceeded {max_vertices} vertices")
    return tree


def generate_process(params: TokunagaParams, rng, order=None, max_vertices=DEFAULT_MAX_VERTICES):
    """One process trajectory as ``(tree, timeline)``."""
    K = sample_order(params, rng) if order is None else int(order)
    forest, log = _grow_process(_Tables(params), [K], rng, max_vertices, record=True)
    tree = forest.split()[0]
    if tree is None:
        raise GenerationAborted(f"tree exceeded {max_vertices} vertices")
    time, order_, kind, side, vert = _timelines(log, 1)[0]
    # global vertex ids coincide with local ones for a single tree
    return tree, ProcessTimeline(time, order_, kind, side, vert)


def _grow_gw(n, rng, max_vertices):
    forest = _Forest(n, max_vertices)
    forest.charge(np.arange(n), np.ones(n))
    vert = forest.add(np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64))
    tree = np.arange(n, dtype=np.int64)
    while vert.size:
        breed = rng.random(vert.size) < 0.5
        live = forest.alive[tree]
        breed &= live
        pv, pt = vert[breed], tree[breed]
        ok = forest.charge(pt, np.full(pt.size, 2))
        pv, pt = pv[ok], pt[ok]
        vert = forest.add(np.repeat(pv, 2), np.repeat(pt, 2))
        tree = np.repeat(pt, 2)
    return forest


def generate_gw_planted(rng, max_vertices=DEFAULT_MAX_VERTICES) -> Tree:
    """Planted critical binary Galton-Watson tree (0 or 2 offspring, 1/2 each)."""
    tree = _grow_gw(1, rng, max_vertices).split()[0]
    if tree is None:
        raise GenerationAborted(f"tree exceeded {max_vertices} vertices")
    return tree


def decorate_edge_lengths(t: Tree, rng, mean=1.0) -> np.ndarray:
    """I.i.d. exponential lengths for every edge, indexed by the lower vertex.

    Entry 0 (the root, which has no parental edge) is NaN.
    """
    out = np.empty(t.n_vertices)
    out[0] = np.nan
    out[1:] = rng.exponential(mean, t.n_vertices - 1)
    return out


# ----------------------------------------------------------------------
# ensembles


@dataclass
class Ensemble:
    """Accepted trees plus bookkeeping for rejected and aborted draws."""

    trees: list = field(default_factory=list)
    rejected_order: int = 0
    aborted: int = 0

    def __len__(self):
        return len(self.trees)

    def __iter__(self):
        return iter(self.trees)


def _chunk_sizes(n, chunk):
    return [min(chunk, n - i) for i in range(0, n, chunk)]


def _map_chunks(fn, sizes, rng, workers):
    streams = rng.spawn(len(sizes))
    jobs = list(zip(sizes, streams))
    workers = workers or default_workers()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda job: fn(*job), jobs))
    return [fn(*job) for job in jobs]


def _grow(method, tables, orders, rng, max_vertices):
    if method == "recursive":
        return _grow_recursive(tables, orders, rng, max_vertices)
    if method == "process":
        return _grow_process(tables, orders, rng, max_vertices)[0]
    raise ValueError(f"unknown method {method!r}")


def sample_trees(
    params: TokunagaParams,
    n: int,
    rng,
    *,
    order=None,
    max_order=None,
    max_vertices=DEFAULT_MAX_VERTICES,
    method="recursive",
    workers=None,
    chunk=CHUNK,
) -> Ensemble:
    """``n`` accepted trees.

    ``order`` conditions every tree on that order.  ``max_order`` rejects
    draws of larger order before anything is built (counted in
    ``rejected_order``); budget overruns are counted in ``aborted``.  Both
    are resampled until ``n`` trees are accepted.  Results depend only on
    ``rng`` and ``chunk``, not on ``workers``.
    """
    tables = _Tables(params)

    def work(size, stream):
        ens = Ensemble()
        need = size
        while need:
            if order is not None:
                orders = np.full(need, int(order))
            else:
                orders = sample_order(params, stream, need)
            if max_order is not None:
                big = orders > max_order
                ens.rejected_order += int(big.sum())
                orders = orders[~big]
            for part in tables.batches(orders):
                if not part.size:
                    continue
                trees = _grow(method, tables, part, stream, max_vertices).split()
                ens.aborted += sum(t is None for t in trees)
                ens.trees.extend(t for t in trees if t is not None)
            need = size - len(ens.trees)
        return ens

    out = Ensemble()
    for part in _map_chunks(work, _chunk_sizes(n, chunk), rng, workers):
        out.trees.extend(part.trees)
        out.rejected_order += part.rejected_order
        out.aborted += part.aborted
    return out


def sample_gw(n, rng, max_vertices=DEFAULT_MAX_VERTICES, chunk=CHUNK) -> Ensemble:
    """``n`` GW draws; trees over budget are counted, not resampled."""

    def work(size, stream):
        trees = _grow_gw(size, stream, max_vertices).split()
        return Ensemble([t for t in trees if t is not None], 0, sum(t is None for t in trees))

    out = Ensemble()
    for part in _map_chunks(work, _chunk_sizes(n, chunk), rng, None):
        out.trees.extend(part.trees)
        out.aborted += part.aborted
    return out


def sample_shapes(params: TokunagaParams, n: int, rng, max_order: int, method="recursive", transform=None) -> ShapeDistribution:
    """Empirical shape counts over ``n`` draws.

    Draws of order above ``max_order`` are counted in ``total`` but their
    shape is not built; counts of every shape of order ``<= max_order`` are
    exactly those of an unrestricted sample.
    """
    tables = _Tables(params)
    dist = ShapeDistribution(total=n)

    def work(size, stream):
        orders = sample_order(params, stream, size)
        orders = orders[orders <= max_order]
        out = []
        for part in tables.batches(orders):
            if part.size:
                out.extend(_grow(method, tables, part, stream, DEFAULT_MAX_VERTICES).split())
        return out

    for part in _map_chunks(work, _chunk_sizes(n, 1 << 15), rng, None):
        for t in part:
            dist.add(canonical_code(transform(t) if transform else t))
    return dist


def shapes_for_orders(params: TokunagaParams, orders, rng, max_order: int, transform=None) -> ShapeDistribution:
    """Shapes of trees drawn conditionally on each given order.

    Orders above ``max_order`` are left unresolved (counted in ``total``).
    """
    tables = _Tables(params)
    orders = np.asarray(orders)
    dist = ShapeDistribution(total=orders.size)
    small = orders[orders <= max_order]
    for part in tables.batches(small):
        if part.size:
            for t in _grow("recursive", tables, part, rng, DEFAULT_MAX_VERTICES).split():
                dist.add(canonical_code(transform(t) if transform else t))
    return dist


def iter_trees(params: TokunagaParams, n: int, rng, batch: int = 16, **kw):
    """Yield ``n`` trees a batch at a time (keeps memory flat for big trees)."""
    left = n
    while left > 0:
        ens = sample_trees(params, min(batch, left), rng, **kw)
        left -= len(ens)
        yield from ens.trees


def sample_gw_shapes(n: int, rng, max_vertices: int) -> ShapeDistribution:
    """GW shape counts; trees above ``max_vertices`` stay unresolved."""
    ens = sample_gw(n, rng, max_vertices, chunk=1 << 15)
    dist = shapes_of(ens.trees, total=n)
    return dist


# ----------------------------------------------------------------------
# population state (no tree materialized)


def population_counts(params: TokunagaParams, n: int, rng, steps: int, kmax: int, condition_order_gt=None):
    """Per-sample counts of living members by order at times ``0..steps``.

    Returns an int array of shape ``(n, steps + 1, kmax + 1)``; orders above
    ``kmax`` are accumulated in the last column.  With
    ``condition_order_gt`` the initial order is drawn conditioned to exceed
    that value.
    """
    tables = _Tables(params)
    out = np.zeros((n, steps + 1, kmax + 1), dtype=np.int64)
    orders = sample_order(params, rng, n)
    if condition_order_gt is not None:
        bad = orders <= condition_order_gt
        while bad.any():
            orders[bad] = sample_order(params, rng, int(bad.sum()))
            bad = orders <= condition_order_gt
    mord = orders
    mtree = np.arange(n)
    np.add.at(out, (mtree, 0, np.minimum(mord, kmax)), 1)
    for s in range(1, steps + 1):
        if not mord.size:
            break
        kind, a, b = _step_members(tables, mord, rng)
        grow = kind != KIND_LEAF
        a, b, t = a[grow], b[grow], mtree[grow]
        mord = np.column_stack((a, b)).ravel()
        mtree = np.repeat(t, 2)
        np.add.at(out, (mtree, s, np.minimum(mord, kmax)), 1)
    return out, orders


def first_split_orders(params: TokunagaParams, n: int, rng):
    """Orders of the two members alive after one step, given initial order > 1.

    Returned in uniformly random order as an ``(n, 2)`` array, together with
    the initial orders.
    """
    tables = _Tables(params)
    orders = sample_order(params, rng, n)
    bad = orders <= 1
    while bad.any():
        orders[bad] = sample_order(params, rng, int(bad.sum()))
        bad = orders <= 1
    _, a, b = _step_members(tables, orders, rng)
    pair = np.column_stack((a, b))
    flip = rng.random(n) < 0.5
    pair[flip] = pair[flip][:, ::-1]
    return pair, orders


# ----------------------------------------------------------------------
# branch statistics without building trees

_COUNT_LIMIT = 2**62


def sample_branch_statistics(params: TokunagaParams, n: int, rng, order=None, max_order=None):
    """Branch and side-branch counts of ``n`` trees, drawn without building them.

    Side-branch counts of distinct branches are independent, so the totals
    over all order-``j`` branches are negative binomial and split
    multinomially over side orders.  Each tree costs ``O(K^2)`` draws
    regardless of its size, so unconditioned ensembles with very large
    trees are cheap.  Returns ``(stats, orders)`` where ``stats`` is a list
    of :class:`~tokunaga.tree.BranchStatistics`.  Trees whose counts would
    overflow 64-bit integers raise :class:`GenerationAborted`.
    """
    from .tree import BranchStatistics

    tables = _Tables(params)
    if order is not None:
        orders = np.full(n, int(order))
    else:
        orders = sample_order(params, rng, n)
        if max_order is not None:
            bad = orders > max_order
            while bad.any():
                orders[bad] = sample_order(params, rng, int(bad.sum()))
                bad = orders > max_order
    Kmax = int(orders.max()) if n else 0
    tables.S_of(Kmax)
    N = np.zeros((n, Kmax + 2), dtype=np.int64)
    side = np.zeros((n, Kmax + 1, Kmax + 1), dtype=np.int64)
    N[np.arange(n), orders] = 1
    for j in range(Kmax, 1, -1):
        nj = N[:, j]
        live = nj > 0
        if not live.any():
            continue
        if nj.max() > _COUNT_LIMIT // 4:
            raise GenerationAborted(f"branch counts of order {j} overflow")
        r = 1.0 / tables.S_of(j - 1)
        m = np.zeros(n, dtype=np.int64)
        if r < 1.0:
            m[live] = rng.negative_binomial(nj[live], r)
        if m.any():
            split = rng.multinomial(m, tables.side(j))
            side[:, 1:j, j] = split
            N[:, 1:j] += split
        N[:, j - 1] += 2 * nj
    out = []
    for t in range(n):
        K = int(orders[t])
        Nd = {k: int(N[t, k]) for k in range(1, K + 1) if N[t, k]}
        sd = {(i, j): int(side[t, i, j]) for j in range(2, K + 1) for i in range(1, j) if side[t, i, j]}
        out.append(BranchStatistics(Nd, sd))
    return out, orders
