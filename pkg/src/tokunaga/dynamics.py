"""Time evolution of expected member counts and the time-shift operator.

Member counts by order evolve linearly: ``x(s+1) = x(s) + G S^{-1} x(s)``
with ``G`` upper triangular and ``S = diag(S_0, S_1, ...)``.  All infinite
objects are truncated at ``Kmax`` and every residual is reported together
with an a-priori bound on what the truncation dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .params import ParameterError, TokunagaParams, as_number
from .sampler import population_counts, sample_trees
from .tree import PreconditionError, Tree, compute_orders, descendant_subtree

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class StateVector:
    """Expected member counts ``x_1..x_Kmax`` (index 0 holds order 1)."""

    x: np.ndarray
    tail: float = 0.0  # mass known to sit above Kmax
    se: np.ndarray | None = None  # Monte Carlo standard errors, if estimated
    n_samples: int = 0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise PreconditionError("state vector needs Kmax >= 1 entries")
        if (x < 0).any():
            raise PreconditionError("state vector entries must be non-negative")
        object.__setattr__(self, "x", x)

    @property
    def Kmax(self) -> int:
        return self.x.size

    @property
    def total(self) -> float:
        return float(self.x.sum())

    def __getitem__(self, K: int) -> float:
        """Entry for order ``K`` (1-based)."""
        return float(self.x[K - 1])


@dataclass(frozen=True)
class EvolutionOperator:
    G: np.ndarray
    S_inv_diag: np.ndarray

    @property
    def Kmax(self) -> int:
        return self.G.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """``I + G S^{-1}``."""
        return np.eye(self.Kmax) + self.G * self.S_inv_diag[None, :]

    @classmethod
    def from_params(cls, params: TokunagaParams, Kmax: int) -> "EvolutionOperator":
        if Kmax < 1:
            raise PreconditionError("Kmax must be >= 1")
        T = np.array([float(t) for t in params.coefs(Kmax)])
        S = np.array([float(s) for s in params.cumsums(Kmax - 1)])
        G = -np.eye(Kmax)
        for j in range(1, Kmax):
            off = T[j - 1] + (2.0 if j == 1 else 0.0)
            G += np.diag(np.full(Kmax - j, off), j)
        return cls(G, 1.0 / S)


@dataclass
class Forest:
    trees: list = field(default_factory=list)

    def __len__(self):
        return len(self.trees)

    def order_counts(self, Kmax: int) -> np.ndarray:
        """Number of trees of each order ``1..Kmax`` (larger orders are dropped)."""
        out = np.zeros(Kmax, dtype=np.int64)
        for t in self.trees:
            k = compute_orders(t).tree_order
            if 1 <= k <= Kmax:
                out[k - 1] += 1
        return out


def initial_state(p, Kmax: int) -> StateVector:
    """``pi_K = p (1-p)^{K-1}`` truncated at ``Kmax``; ``tail`` is ``(1-p)^Kmax``."""
    p = float(as_number(p))
    if not 0 < p < 1:
        raise ParameterError("p must lie in (0, 1)")
    if Kmax < 1:
        raise PreconditionError("Kmax must be >= 1")
    K = np.arange(1, Kmax + 1)
    return StateVector(p * (1 - p) ** (K - 1), tail=(1 - p) ** Kmax)


def split_kernel(params: TokunagaParams, a: int, b: int):
    """Probability that a member produces offspring of orders ``(a, b)``, ``b <= a``.

    For ``a == b`` the parent has order ``a + 1`` and terminates, splitting
    into two order-``a`` members: ``1/S_a``.  For ``b < a`` the parent has
    order ``a``, survives, and spawns an order-``b`` side member:
    ``T_{a-b}/S_{a-1}``.
    """
    if not 1 <= b <= a:
        raise PreconditionError("need a >= b >= 1")
    if a == b:
        return 1 / params.cumsum(a)
    return params.coef(a - b) / params.cumsum(a - 1)


def step(op: EvolutionOperator, x: StateVector) -> StateVector:
    """One time step ``x + G S^{-1} x`` (truncated)."""
    if x.Kmax != op.Kmax:
        raise PreconditionError(f"operator is {op.Kmax}x{op.Kmax} but state has {x.Kmax} entries")
    y = x.x + op.G @ (op.S_inv_diag * x.x)
    # tiny negative values can only come from rounding
    return StateVector(np.maximum(y, 0.0), tail=x.tail)


def step_components(params: TokunagaParams, x: StateVector) -> StateVector:
    """The same step assembled member by member from :func:`split_kernel`."""
    n = x.Kmax
    xs = x.x
    y = np.zeros(n)
    for K in range(1, n + 1):
        # survivors of order K (any side-branch outcome)
        acc = xs[K - 1] * sum(float(split_kernel(params, K, b)) for b in range(1, K))
        # terminations of order K+1 into two order-K members
        if K < n:
            acc += 2 * xs[K] * float(split_kernel(params, K, K))
        # side members of order K from survivors of higher order
        for a in range(K + 1, n + 1):
            acc += xs[a - 1] * float(split_kernel(params, a, K))
        y[K - 1] = acc
    return StateVector(y, tail=x.tail)


@dataclass(frozen=True)
class Residual:
    value: float
    tail_bound: float
    rounding: float = 0.0  # floating-point error allowance (0 for exact arithmetic)

    @property
    def ok(self) -> bool:
        return self.value <= self.tail_bound + self.rounding


def time_invariance_residual(params: TokunagaParams, Kmax: int) -> Residual:
    """L1 norm of ``G S^{-1} pi`` truncated at ``Kmax``.

    Column sums of ``|G| S^{-1}`` are ``(S_{j-1} + 2)/S_{j-1} <= 3``, so the
    contribution of orders above ``Kmax`` is at most ``3 (1-p)^Kmax``.
    """
    op = EvolutionOperator.from_params(params, Kmax)
    pi = initial_state(params.p, Kmax)
    r = op.G @ (op.S_inv_diag * pi.x)
    return Residual(float(np.abs(r).sum()), 3 * pi.tail, 4 * Kmax * EPS)


@dataclass(frozen=True)
class ProgenyCheck:
    before: float
    after: float

    @property
    def ok(self) -> bool:
        return abs(self.after - self.before) <= 1e-12


def progeny_check(params: TokunagaParams) -> ProgenyCheck:
    """Total expected population before and after one step from ``pi``.

    Order-1 members vanish and every other member leaves two, so the
    exact untruncated total after one step is ``2(1-p)``.
    """
    p = float(params.p)
    return ProgenyCheck(1.0, 2 * (1 - p))


def evolve(params: TokunagaParams, s: int, Kmax: int = 60, x: StateVector | None = None) -> StateVector:
    op = EvolutionOperator.from_params(params, Kmax)
    x = initial_state(params.p, Kmax) if x is None else x
    for _ in range(s):
        x = step(op, x)
    return x


def time_shift(f: Forest) -> Forest:
    """Remove every root edge: order-1 trees vanish, others split in two."""
    out = []
    for t in f.trees:
        if t.n_vertices <= 2:
            continue
        u = t.progenitor
        out.append(descendant_subtree(t, int(t.left[u])))
        out.append(descendant_subtree(t, int(t.right[u])))
    return Forest(out)


def _estimate(counts: np.ndarray, Kmax: int) -> StateVector:
    n = counts.shape[0]
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return StateVector(mean[1 : Kmax + 1], tail=float(mean[Kmax + 1]), se=se[1 : Kmax + 1], n_samples=n)


def empirical_state_vector(
    params: TokunagaParams, s: int, n_samples: int, rng, Kmax: int = 10, mode: str = "process", max_order=None
) -> StateVector:
    """Monte Carlo estimate of the mean number of trees of each order after
    ``s`` time shifts.

    ``mode="process"`` runs the member process directly (same law, and it
    never materializes the far-future part of the tree).  ``mode="tree"``
    samples whole trees and applies :func:`time_shift`; ``max_order`` then
    caps the sampled orders to keep trees small.
    """
    if s < 0:
        raise PreconditionError("s must be >= 0")
    if mode == "process":
        # last column collects every order above Kmax
        counts, _ = population_counts(params, n_samples, rng, s, Kmax + 1)
        return _estimate(counts[:, s, :], Kmax)
    if mode != "tree":
        raise ValueError(f"unknown mode {mode!r}")
    ens = sample_trees(params, n_samples, rng, max_order=max_order)
    rows = np.zeros((len(ens.trees), Kmax + 2), dtype=np.int64)
    for i, t in enumerate(ens.trees):
        f = Forest([t])
        for _ in range(s):
            f = time_shift(f)
        for tt in f.trees:
            k = compute_orders(tt).tree_order
            rows[i, min(k, Kmax + 1)] += 1
    return _estimate(rows, Kmax)


def check_system_S(params: TokunagaParams, Kmax: int, k: int) -> Residual:
    """``|S_0/S_k - sum_{i=1}^{Kmax-k} 2^{-i} S_i/S_{k+i}|``.

    ``S`` is non-decreasing, so each dropped term is at most ``2^{-i}`` and
    the tail is bounded by ``2^{-(Kmax-k)}``.
    """
    if not 1 <= k <= Kmax // 2:
        raise PreconditionError("need 1 <= k <= Kmax/2")
    S = params.cumsums(Kmax)
    n = Kmax - k
    if params.exact:
        rhs = sum(Fraction(S[i], S[k + i]) / 2**i for i in range(1, n + 1))
        return Residual(float(abs(S[0] / S[k] - rhs)), 2.0**-n)
    S = [float(v) for v in S]
    rhs = sum(2.0**-i * (S[i] / S[k + i]) for i in range(1, n + 1))
    return Residual(abs(S[0] / S[k] - rhs), 2.0**-n, 4 * (n + 2) * EPS)


def check_system_a(a, n_max: int, j_max: int) -> list[Residual]:
    """Residuals of ``sum_j 2^{-j} prod_{k=j}^{n+j-1} a_k = prod_{k<n} a_k``
    for ``n = 1..n_max``, summing ``j <= j_max``.

    With every ``a_k`` in ``(0, 1]`` the products are at most one, so the
    dropped tail is at most ``2^{-j_max}``.
    """
    a = np.asarray(a, dtype=float)
    need = n_max + j_max
    if a.size < need:
        raise PreconditionError(f"need at least {need} terms of a, got {a.size}")
    if ((a <= 0) | (a > 1)).any():
        raise PreconditionError("a_k must lie in (0, 1]")
    out = []
    w = 2.0 ** -np.arange(1, j_max + 1)
    for n in range(1, n_max + 1):
        prods = np.array([np.prod(a[j : n + j]) for j in range(1, j_max + 1)])
        err = 4 * (n + j_max) * EPS
        out.append(Residual(float(abs(w @ prods - np.prod(a[:n]))), 2.0**-j_max, err))
    return out
