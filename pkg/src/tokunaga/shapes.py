"""Shape distributions keyed by canonical code."""

from __future__ import annotations

from dataclasses import dataclass, field

from .tree import canonical_code


@dataclass
class ShapeDistribution:
    """Mass per canonical code.

    ``total`` is the normalizer: the sample size for empirical counts or 1
    for exact measures.  It may exceed the summed mass when part of the
    sample was never resolved into shapes (draws above an order cap, trees
    over a vertex budget) or, for truncated exact measures, by the missing
    tail mass.
    """

    mass: dict = field(default_factory=dict)
    total: float = 0
    tail: float = 0

    def add(self, code, weight=1):
        self.mass[code] = self.mass.get(code, 0) + weight

    def normalized(self) -> dict:
        if not self.total:
            return {}
        return {k: v / self.total for k, v in self.mass.items()}

    def top(self, k: int) -> list:
        return sorted(self.mass, key=lambda s: (-self.mass[s], s))[:k]

    @property
    def unresolved(self):
        return self.total - sum(self.mass.values())

    def __len__(self):
        return len(self.mass)


def shapes_of(trees, total=None, transform=None) -> ShapeDistribution:
    """Empirical shape counts of an iterable of trees."""
    dist = ShapeDistribution()
    n = 0
    for t in trees:
        n += 1
        dist.add(canonical_code(transform(t) if transform else t))
    dist.total = n if total is None else total
    return dist
