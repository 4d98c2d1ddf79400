"""Tokunaga coefficient sequences and the side-order law they induce."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational


class ParameterError(ValueError):
    pass


class UndefinedDistributionError(ValueError):
    """Side orders requested for a branch that can never carry side branches."""


def as_number(x):
    """Exact ``Fraction`` for ints, rationals and decimal strings; float otherwise."""
    if isinstance(x, bool):
        raise ParameterError("booleans are not numbers here")
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    return float(x)


def is_exact(*xs) -> bool:
    return all(isinstance(x, Fraction) for x in xs)


@dataclass(frozen=True)
class TokunagaParams:
    """Tokunaga sequence ``T_1, T_2, ...`` and root-order parameter ``p``.

    ``T`` holds explicit leading coefficients.  Beyond them the sequence
    continues with ``tail``: ``"zero"`` (default) or ``"geometric"``, which
    extends ``T_{n+j} = T_n * tail_ratio**j``.
    """

    T: tuple = ()
    p: object = Fraction(1, 2)
    tail: str = "zero"
    tail_ratio: object = None

    def __post_init__(self):
        T = tuple(as_number(t) for t in self.T)
        p = as_number(self.p)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "p", p)
        if any(t < 0 for t in T):
            raise ParameterError("Tokunaga coefficients must be non-negative")
        if not 0 < p < 1:
            raise ParameterError("p must lie in (0, 1)")
        if self.tail not in ("zero", "geometric"):
            raise ParameterError(f"unknown tail rule {self.tail!r}")
        if self.tail == "geometric":
            if self.tail_ratio is None or not T:
                raise ParameterError("geometric tail needs tail_ratio and at least one T")
            r = as_number(self.tail_ratio)
            if r < 0:
                raise ParameterError("tail_ratio must be non-negative")
            object.__setattr__(self, "tail_ratio", r)

    # -- coefficient access ----------------------------------------------
    def coef(self, k: int):
        """``T_k`` with ``T_0 = 0``."""
        if k < 0:
            raise ParameterError("negative Tokunaga index")
        if k == 0:
            return self._zero()
        if k <= len(self.T):
            return self.T[k - 1]
        if self.tail == "geometric":
            return self.T[-1] * self.tail_ratio ** (k - len(self.T))
        return self._zero()

    def cumsum(self, k: int):
        """``S_k = 1 + T_1 + ... + T_k``."""
        s = self._zero() + 1
        for j in range(1, k + 1):
            s += self.coef(j)
        return s

    def coefs(self, n: int) -> list:
        return [self.coef(k) for k in range(1, n + 1)]

    def cumsums(self, n: int) -> list:
        """``[S_0, ..., S_n]``."""
        out = [self._zero() + 1]
        for k in range(1, n + 1):
            out.append(out[-1] + self.coef(k))
        return out

    def termination_prob(self, K: int):
        """``q_K = 1 / S_{K-1}`` for a member of order ``K``."""
        if K < 1:
            raise ParameterError("orders start at 1")
        return 1 / self.cumsum(K - 1)

    @property
    def exact(self) -> bool:
        vals = (self.p, *self.T) + ((self.tail_ratio,) if self.tail == "geometric" else ())
        return is_exact(*vals)

    def _zero(self):
        return Fraction(0) if self.exact else 0.0

    def describe(self) -> dict:
        return {
            "kind": "generic",
            "T": [str(t) for t in self.T],
            "p": str(self.p),
            "tail": self.tail,
            "tail_ratio": None if self.tail_ratio is None else str(self.tail_ratio),
        }


@dataclass(frozen=True, init=False)
class GeometricTokunaga(TokunagaParams):
    """Closed-form family ``T_k = a * c**(k - 1)``."""

    a: object = None
    c: object = None

    def __init__(self, a, c, p=Fraction(1, 2)):
        a = as_number(a)
        c = as_number(c)
        if a < 0 or c <= 0:
            raise ParameterError("need a >= 0 and c > 0")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "T", (a,))
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "tail", "geometric")
        object.__setattr__(self, "tail_ratio", c)
        TokunagaParams.__post_init__(self)

    def coef(self, k: int):
        if k < 0:
            raise ParameterError("negative Tokunaga index")
        if k == 0:
            return self._zero()
        return self.a * self.c ** (k - 1)

    def describe(self) -> dict:
        return {"kind": "geometric", "a": str(self.a), "c": str(self.c), "p": str(self.p)}


@dataclass(frozen=True, init=False)
class CriticalTokunaga(GeometricTokunaga):
    """Critical family: ``p = 1/2``, ``T_k = (c - 1) c**(k - 1)``, so ``S_k = c**k``."""

    def __init__(self, c):
        c = as_number(c)
        if c < 1:
            raise ParameterError("critical Tokunaga needs c >= 1")
        super().__init__(c - 1, c, Fraction(1, 2))

    def cumsum(self, k: int):
        return self.c**k + self._zero()

    def describe(self) -> dict:
        return {"kind": "critical", "c": str(self.c)}


def side_order_distribution(params: TokunagaParams, K: int) -> list:
    """``[p_{K,1}, ..., p_{K,K-1}]`` with ``p_{K,i}`` proportional to ``T_{K-i}``."""
    if K < 2:
        raise ParameterError("side orders exist only for K >= 2")
    w = [params.coef(K - i) for i in range(1, K)]
    total = sum(w)
    if total == 0:
        raise UndefinedDistributionError(f"T_1..T_{K - 1} are all zero; no side branches at order {K}")
    return [x / total for x in w]
