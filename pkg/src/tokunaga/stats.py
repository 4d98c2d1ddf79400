"""Ensemble estimators and hypothesis tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sst

from .params import CriticalTokunaga, TokunagaParams
from .sampler import (
    first_split_orders,
    sample_order,
    sample_shapes,
    sample_trees,
    shapes_for_orders,
)
from .shapes import ShapeDistribution
from .tree import (
    BranchStatistics,
    OrderedTree,
    PreconditionError,
    Tree,
    branch_statistics,
    canonical_code,
    compute_orders,
    descendant_subtree,
    prune,
)


class FitError(ValueError):
    pass


def _ordered(t) -> OrderedTree:
    return t if isinstance(t, OrderedTree) else compute_orders(t)


# ----------------------------------------------------------------------
# Tokunaga matrix


@dataclass
class TokunagaMatrix:
    """Pooled side-branch ratios ``T_hat[(i, j)] = sum N_ij / sum N_j``.

    Cells whose ``N_j`` sum is zero are absent (undefined, not zero).  The
    ``*_sq``/``cross`` sums give per-tree delta-method standard errors.
    """

    N: dict = field(default_factory=dict)
    N_side: dict = field(default_factory=dict)
    n_trees: int = 0
    N_sq: dict = field(default_factory=dict)
    side_sq: dict = field(default_factory=dict)
    cross: dict = field(default_factory=dict)
    exact_values: dict | None = None

    def add(self, bs: BranchStatistics):
        self.n_trees += 1
        for j, v in bs.N.items():
            self.N[j] = self.N.get(j, 0) + v
            self.N_sq[j] = self.N_sq.get(j, 0) + v * v
        for ij, v in bs.N_side.items():
            self.N_side[ij] = self.N_side.get(ij, 0) + v
            self.side_sq[ij] = self.side_sq.get(ij, 0) + v * v
            self.cross[ij] = self.cross.get(ij, 0) + v * bs.N.get(ij[1], 0)

    @classmethod
    def from_values(cls, values: dict) -> "TokunagaMatrix":
        """A matrix holding given values exactly (for fits and checks)."""
        return cls(exact_values={k: float(v) for k, v in values.items()})

    @classmethod
    def from_params(cls, params: TokunagaParams, max_order: int) -> "TokunagaMatrix":
        vals = {(i, j): params.coef(j - i) for j in range(2, max_order + 1) for i in range(1, j)}
        return cls.from_values(vals)

    @property
    def T_hat(self) -> dict:
        if self.exact_values is not None:
            return dict(self.exact_values)
        out = {}
        for j, nj in self.N.items():
            if nj <= 0:
                continue
            for i in range(1, j):
                out[(i, j)] = self.N_side.get((i, j), 0) / nj
        return out

    @property
    def counts(self) -> dict:
        return {"N": dict(self.N), "N_side": dict(self.N_side)}

    def se(self, i: int, j: int) -> float:
        """Delta-method standard error of ``T_hat[(i, j)]`` over trees."""
        if self.exact_values is not None:
            return 0.0
        nj = self.N.get(j, 0)
        if nj <= 0 or self.n_trees < 2:
            return math.nan
        r = self.N_side.get((i, j), 0) / nj
        ss = self.side_sq.get((i, j), 0) - 2 * r * self.cross.get((i, j), 0) + r * r * self.N_sq.get(j, 0)
        return math.sqrt(max(ss, 0.0)) / nj

    def branch_count(self, j: int) -> int:
        if self.exact_values is not None:
            return math.inf
        return self.N.get(j, 0)

    def diagonal(self, k: int, min_count: int = 0) -> dict:
        """Cells ``(j-k, j) -> value`` on gap ``k`` with at least ``min_count`` order-j branches."""
        return {ij: v for ij, v in self.T_hat.items() if ij[1] - ij[0] == k and self.branch_count(ij[1]) >= min_count}

    def pooled_diagonal(self, k: int, min_count: int = 0):
        cells = self.diagonal(k, min_count)
        if not cells:
            return None
        if self.exact_values is not None:
            return float(np.mean(list(cells.values())))
        num = sum(self.N_side.get(ij, 0) for ij in cells)
        den = sum(self.N[ij[1]] for ij in cells)
        return num / den


def estimate_tokunaga(ensemble) -> TokunagaMatrix:
    """Pool branch and side-branch counts over an iterable of trees."""
    tm = TokunagaMatrix()
    for t in ensemble:
        tm.add(t if isinstance(t, BranchStatistics) else branch_statistics(_ordered(t)))
    if tm.n_trees == 0:
        raise PreconditionError("empty ensemble")
    return tm


@dataclass
class GapReport:
    ok: bool
    insufficient: bool
    spread: dict  # gap k -> max relative deviation from the diagonal mean
    cells: dict  # gap k -> {(i, j): value}


def tokunaga_depends_only_on_gap(tm: TokunagaMatrix, tol: float, min_count: int = 0) -> GapReport:
    """Whether every diagonal ``j - i = k`` is constant within ``tol`` (relative)."""
    gaps = sorted({j - i for i, j in tm.T_hat})
    spread, cells = {}, {}
    for k in gaps:
        c = tm.diagonal(k, min_count)
        if len(c) < 2:
            continue
        v = np.array(list(c.values()))
        m = v.mean()
        spread[k] = float(np.abs(v - m).max() / m) if m > 0 else (0.0 if not v.any() else math.inf)
        cells[k] = c
    if not spread:
        return GapReport(False, True, spread, cells)
    return GapReport(all(s <= tol for s in spread.values()), False, spread, cells)


@dataclass
class ACFit:
    a: float
    c: float
    residual: float  # RMS of log-scale residuals
    critical_gap: float  # a - (c - 1); zero on the critical family
    diagonals: dict  # k -> pooled estimate used


def fit_tokunaga_ac(tm: TokunagaMatrix, min_count: int = 0, max_gap: int | None = None) -> ACFit:
    """Least-squares fit of ``log T_k = log a + (k - 1) log c``."""
    gaps = sorted({j - i for i, j in tm.T_hat})
    if max_gap is not None:
        gaps = [k for k in gaps if k <= max_gap]
    used = {}
    for k in gaps:
        v = tm.pooled_diagonal(k, min_count)
        if v is None:
            continue
        if v <= 0:
            warnings.warn(f"diagonal {k} has non-positive estimate {v}; excluded from fit", stacklevel=2)
            continue
        used[k] = v
    if len(used) < 2:
        raise FitError("need at least two usable diagonals")
    k = np.array(sorted(used), dtype=float)
    y = np.log([used[int(x)] for x in k])
    slope, icept = np.polyfit(k - 1, y, 1)
    res = y - (icept + slope * (k - 1))
    a, c = math.exp(icept), math.exp(slope)
    return ACFit(a, c, float(np.sqrt(np.mean(res**2))), a - (c - 1), used)


# ----------------------------------------------------------------------
# Horton laws


@dataclass
class HortonReport:
    order: int
    n_trees: int
    mean_counts: np.ndarray  # index i -> mean N_i (index 0 unused)
    ratios: dict  # i -> mean N_i / mean N_{i+1}
    ratio_se: dict
    R_b_estimate: float
    mean_lengths: np.ndarray | None = None  # i -> mean order-i branch length
    R_r_estimate: float | None = None
    d_estimate: float | None = None
    window: tuple = ()


def _geo_mean(xs):
    return float(np.exp(np.mean(np.log(xs))))


def horton_report(ensemble, lengths=None, window=None) -> HortonReport:
    """Branch-count ratios over trees that all share one order ``K >= 4``.

    ``window`` (inclusive ``(lo, hi)``) selects the orders pooled into the
    ``R`` estimates; the default skips ``i <= 2`` and ``i >= K - 2``.
    """
    rows = []
    len_sum = len_cnt = None
    K = None
    lengths = iter(lengths) if lengths is not None else None
    for t in ensemble:
        ot = _ordered(t)
        k = ot.tree_order
        if K is None:
            K = k
            if K < 4:
                raise PreconditionError("Horton analysis needs order >= 4")
            len_sum = np.zeros(K + 1)
            len_cnt = np.zeros(K + 1)
        elif k != K:
            raise PreconditionError(f"mixed orders in ensemble ({K} and {k})")
        bt = ot.branch_table
        rows.append(np.bincount(bt.order, minlength=K + 1))
        if lengths is not None:
            w = np.asarray(next(lengths), dtype=float)
            per_branch = np.bincount(bt.vertex_branch[1:], weights=w[1:], minlength=bt.head.size)
            len_sum += np.bincount(bt.order, weights=per_branch, minlength=K + 1)
            len_cnt += np.bincount(bt.order, minlength=K + 1)
    if K is None:
        raise PreconditionError("empty ensemble")
    N = np.array(rows, dtype=float)
    n = N.shape[0]
    mean = N.mean(axis=0)
    ratios, se = {}, {}
    for i in range(1, K):
        r = mean[i] / mean[i + 1]
        ratios[i] = float(r)
        if n > 1:
            d = N[:, i] - r * N[:, i + 1]
            se[i] = float(d.std(ddof=1) / math.sqrt(n) / mean[i + 1])
        else:
            se[i] = math.nan
    lo, hi = window if window is not None else (3, K - 3)
    if lo > hi:
        lo, hi = 1, K - 1
    win = [i for i in range(lo, hi + 1) if i in ratios]
    R_b = _geo_mean([ratios[i] for i in win])
    rep = HortonReport(K, n, mean, ratios, se, R_b, window=(lo, hi))
    if lengths is not None:
        r_mean = np.divide(len_sum, len_cnt, out=np.full(K + 1, np.nan), where=len_cnt > 0)
        rep.mean_lengths = r_mean
        R_r = _geo_mean([r_mean[i + 1] / r_mean[i] for i in win])
        rep.R_r_estimate = R_r
        rep.d_estimate = math.log(R_b) / math.log(R_r)
    return rep


def fractal_dimension(c) -> float:
    """``d_c = 1 + ln 2 / ln c`` for the critical family."""
    c = float(c)
    if c <= 1:
        raise ValueError("fractal dimension needs c > 1 (it diverges as c -> 1)")
    return 1 + math.log(2) / math.log(c)


@dataclass(frozen=True)
class HortonToC:
    c: float
    d: float
    consistency_error: float  # |log2(R_b) - d/(d-1)|


def horton_ratio_to_c(R_b) -> HortonToC:
    R_b = float(R_b)
    if R_b <= 2:
        raise ValueError("R_b must exceed 2")
    c = R_b / 2
    d = fractal_dimension(c)
    return HortonToC(c, d, abs(math.log2(R_b) - d / (d - 1)))


# ----------------------------------------------------------------------
# shape distributions


def shape_tv_distance(p1: ShapeDistribution, p2: ShapeDistribution, top_k: int = 20) -> float:
    """Total variation over the union of both top-``top_k`` shape sets plus an
    "other" cell holding the rest (including unresolved mass)."""
    if not p1.total or not p2.total:
        raise PreconditionError("shape distributions must be non-empty")
    keys = set(p1.top(top_k)) | set(p2.top(top_k))
    a, b = p1.normalized(), p2.normalized()
    da = [a.get(k, 0) for k in keys]
    db = [b.get(k, 0) for k in keys]
    diff = sum(abs(x - y) for x, y in zip(da, db))
    diff += abs((1 - sum(da)) - (1 - sum(db)))
    return float(diff) / 2


def _cells(pmf, n, min_expected=5.0):
    """Largest ``B`` such that lumping orders ``>= B`` keeps expected counts >= min_expected."""
    B = 1
    while n * pmf(B) >= min_expected and n * (1 - sum(pmf(k) for k in range(1, B + 1))) >= min_expected:
        B += 1
    return B


@dataclass
class ChiSquare:
    statistic: float
    dof: int
    pvalue: float
    alpha: float

    @property
    def rejected(self) -> bool:
        return self.pvalue < self.alpha


def order_gof(orders, p, alpha=0.01) -> ChiSquare:
    """Chi-square fit of ``orders - 1`` to ``Geom(p)`` (support from 0)."""
    orders = np.asarray(orders)
    n = orders.size
    p = float(p)

    def pmf(k):
        return p * (1 - p) ** (k - 1)

    B = _cells(pmf, n)
    obs = np.bincount(np.minimum(orders, B), minlength=B + 1)[1:]
    exp = np.array([pmf(k) for k in range(1, B)] + [(1 - p) ** (B - 1)]) * n
    res = sst.chisquare(obs, exp)
    return ChiSquare(float(res.statistic), B - 1, float(res.pvalue), alpha)


def exact_principal_joint(params: TokunagaParams, B: int) -> np.ndarray:
    """Exact law of the randomly ordered principal-subtree orders ``(K_a, K_b)``
    given ``K > 1``, lumped to ``1..B`` (index ``B`` = orders ``>= B``)."""
    p = float(params.p)
    S = [float(s) for s in params.cumsums(200)]
    T = [0.0] + [float(t) for t in params.coefs(200)]
    J = np.zeros((B + 1, B + 1))
    for K in range(2, 200):
        pk = p * (1 - p) ** (K - 1) / (1 - p)
        if pk < 1e-18:
            break
        # terminal split into two order K-1
        a = min(K - 1, B)
        J[a, a] += pk / S[K - 1]
        for i in range(1, K):
            w = pk * T[K - i] / S[K - 1] / 2
            a, b = min(K, B), min(i, B)
            J[a, b] += w
            J[b, a] += w
    return J[1:, 1:]


@dataclass
class PrincipalSubtreeReport:
    n_samples: int
    gof: ChiSquare
    independence: ChiSquare
    effect_size: float  # exact sum (P_ab - P_a P_b)^2 / (P_a P_b) on the tested cells
    noncentrality: float  # n * effect_size
    shape_tv: float | None
    marginal_counts: np.ndarray = None


def principal_subtree_tests(
    params: TokunagaParams, n_samples: int, rng, alpha=0.01, shape_max_order=4, top_k=20, with_shapes=True
) -> PrincipalSubtreeReport:
    """Order law, joint-order independence and shape law of the principal subtrees.

    Pairs come from the first split of the member process, which has the
    law of the principal subtrees of a tree of order > 1.  Shapes of
    subtrees of order ``<= shape_max_order`` are then grown conditionally
    on their order and compared with fresh unconditioned draws.
    """
    if n_samples < 2:
        raise PreconditionError("need samples")
    pair, _ = first_split_orders(params, n_samples, rng)
    ka, kb = pair[:, 0], pair[:, 1]
    gof = order_gof(ka, params.p, alpha)
    p = float(params.p)
    # lump orders >= B so that the corner cell still expects >= 5 counts
    B = 2
    while n_samples * (1 - p) ** (2 * B) >= 5:
        B += 1
    table = np.zeros((B, B), dtype=np.int64)
    np.add.at(table, (np.minimum(ka, B) - 1, np.minimum(kb, B) - 1), 1)
    keep_r = table.sum(axis=1) > 0
    keep_c = table.sum(axis=0) > 0
    chi2, pval, dof, _ = sst.chi2_contingency(table[keep_r][:, keep_c], correction=False)
    J = exact_principal_joint(params, B)
    P = np.outer(J.sum(axis=1), J.sum(axis=0))
    eff = float(np.sum((J - P) ** 2 / np.where(P > 0, P, 1)))
    tv = None
    if with_shapes:
        got = shapes_for_orders(params, ka, rng, shape_max_order)
        fresh = shapes_for_orders(params, sample_order(params, rng, n_samples), rng, shape_max_order)
        tv = shape_tv_distance(got, fresh, top_k)
    return PrincipalSubtreeReport(
        n_samples,
        gof,
        ChiSquare(float(chi2), int(dof), float(pval), alpha),
        eff,
        n_samples * eff,
        tv,
        np.bincount(ka),
    )


def pruned_shape_distribution(params: TokunagaParams, n: int, rng, max_order: int = 4) -> ShapeDistribution:
    """Shapes of pruned trees conditioned on being non-empty.

    A pruned tree has order ``<= max_order`` exactly when the original had
    order ``<= max_order + 1``, so those draws are grown and the rest stay
    unresolved.
    """
    d = sample_shapes(params, n, rng, max_order + 1, transform=prune)
    empty = d.mass.pop("", 0)
    d.total -= empty
    return d


def prune_invariance_tv(params: TokunagaParams, n: int, rng, max_order: int = 4, top_k: int = 20) -> float:
    pruned = pruned_shape_distribution(params, n, rng, max_order)
    fresh = sample_shapes(params, n, rng, max_order)
    return shape_tv_distance(pruned, fresh, top_k)


def coordination_tv(params: TokunagaParams, K: int, kappa: int, n: int, rng, top_k: int = 20) -> float:
    """TV between a uniformly chosen order-``kappa`` descendant subtree of
    order-``K`` trees and direct draws conditioned on order ``kappa``."""
    if not 1 <= kappa < K:
        raise PreconditionError("need 1 <= kappa < K")
    picked = ShapeDistribution(total=n)
    for t in sample_trees(params, n, rng, order=K):
        ot = compute_orders(t)
        cand = np.flatnonzero(ot.order[1:] == kappa) + 1
        v = int(cand[rng.integers(cand.size)])
        picked.add(canonical_code(descendant_subtree(ot, v)))
    fresh = ShapeDistribution(total=n)
    for t in sample_trees(params, n, rng, order=kappa):
        fresh.add(canonical_code(t))
    return shape_tv_distance(picked, fresh, top_k)


def expected_branch_counts(params: TokunagaParams, K: int) -> np.ndarray:
    """``E[N_i | ord = K]`` for ``i = 1..K`` (index 0 unused).

    Every order-``k`` branch ends in two order-``k-1`` branches and carries
    ``T_{k-i}`` order-``i`` side branches on average.
    """
    T = [0] + params.coefs(K)
    E = [0] * (K + 1)
    E[K] = 1 + 0 * T[0]
    for i in range(K - 1, 0, -1):
        E[i] = 2 * E[i + 1] + sum(E[k] * T[k - i] for k in range(i + 1, K + 1))
    return np.array(E, dtype=object)
