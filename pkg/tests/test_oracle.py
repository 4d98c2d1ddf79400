from collections import defaultdict
from fractions import Fraction

import pytest
from hypothesis import given, settings

from tokunaga.oracle import (
    EnumerationBudgetError,
    ExactMeasure,
    enumerate_preimages,
    enumerate_trees,
    exact_measure,
    exact_pruned_mass,
    gw_measure,
    order_conditional_measure,
    prune_invariance_check,
    pruned_mass_series,
    shapes_by_leaves,
)
from tokunaga.params import CriticalTokunaga, TokunagaParams
from tokunaga.tree import PreconditionError, Tree, canonical_code, compute_orders, prune

from .strategies import trees

GENERIC = TokunagaParams(T=(1, Fraction(1, 2), 2), p=Fraction(3, 10))


def test_exact_measure_examples():
    P = CriticalTokunaga(2)
    assert exact_measure(Tree.single_edge(), P) == Fraction(1, 2)
    assert exact_measure(Tree.cherry(), P) == Fraction(1, 8)
    for K in range(1, 6):
        assert exact_measure(Tree.skeleton(K), CriticalTokunaga(1)) == Fraction(1, 2**K)
    assert exact_measure(Tree.from_code("(L,(L,L))"), CriticalTokunaga(1)) == 0
    with pytest.raises(PreconditionError):
        exact_measure(Tree.empty(), P)


def test_exact_measure_hand_computed():
    # order-2 tree with one {12} side branch: P(K=2) * r (1 - r) * p_{2,1}, r = 1/S_1
    P = CriticalTokunaga(3)
    r = Fraction(1, 3)
    assert exact_measure(Tree.from_code("(L,(L,L))"), P) == Fraction(1, 4) * r * (1 - r)
    # order 3 with asymmetric terminal pair: factor 2
    t = Tree.from_code("((L,L),(L,(L,L)))")
    r3 = Fraction(1, 9)
    expect = Fraction(1, 8) * r3 * 2 * (Fraction(1, 3)) * (Fraction(1, 3) * Fraction(2, 3))
    assert exact_measure(t, P) == expect


def test_order_conditional_sums_to_one():
    P = CriticalTokunaga(2)
    d = enumerate_trees(2, 12, P)
    by_order = defaultdict(Fraction)
    for code in d.mass:
        t = Tree.from_code(code)
        by_order[compute_orders(t).tree_order] += order_conditional_measure(t, P)
    assert by_order[1] == 1
    # the only order-2 shapes missing have more than 12 side leaves
    assert by_order[2] == 1 - Fraction(1, 2) ** 13


def test_enumeration_examples():
    d = enumerate_trees(1, 3, CriticalTokunaga(2))
    assert d.mass == {"L": Fraction(1, 2)} and d.tail == Fraction(1, 2)
    d = enumerate_trees(3, 2, CriticalTokunaga(1))
    assert sorted(d.mass.values()) == [Fraction(1, 8), Fraction(1, 4), Fraction(1, 2)]
    for P in (CriticalTokunaga(2), CriticalTokunaga(3), GENERIC):
        d = enumerate_trees(3, 2, P)
        assert sum(d.mass.values()) + d.tail == 1
        assert all(v > 0 for v in d.mass.values())
        for code, m in list(d.mass.items())[:50]:
            assert exact_measure(Tree.from_code(code), P) == m


def test_enumeration_budget():
    with pytest.raises(EnumerationBudgetError):
        enumerate_trees(4, 6, CriticalTokunaga(2), budget=1000)


def test_exact_measure_cache():
    em = ExactMeasure(CriticalTokunaga(2))
    assert em("(L,L)") == Fraction(1, 8)
    assert em(Tree.cherry()) == Fraction(1, 8)
    assert list(em.cache) == ["(L,L)"]


def test_gw_matches_c2():
    P = CriticalTokunaga(2)
    codes = list(enumerate_trees(3, 2, P).mass) + list(enumerate_trees(4, 1, P).mass)
    for code in codes:
        t = Tree.from_code(code)
        assert gw_measure(t) == exact_measure(t, P)


@given(trees)
@settings(max_examples=60, deadline=None)
def test_gw_matches_c2_random(t):
    assert gw_measure(t) == exact_measure(t, CriticalTokunaga(2))


def test_pruned_mass_empty():
    assert exact_pruned_mass(Tree.empty(), CriticalTokunaga(2)).value == Fraction(1, 2)
    assert exact_pruned_mass(Tree.empty(), GENERIC).value == Fraction(3, 10)


def test_pruned_series_matches_brute_force():
    for P in (CriticalTokunaga(2), GENERIC):
        for code in ("L", "(L,L)", "(L,(L,L))", "((L,L),(L,(L,L)))"):
            t = Tree.from_code(code)
            code = canonical_code(t)
            pre = enumerate_preimages(t, 3)
            acc = defaultdict(Fraction)
            for c, (tp, n) in pre.items():
                assert canonical_code(prune(tp)) == code
                acc[n] += exact_measure(tp, P)
            assert pruned_mass_series(t, P, 3) == [acc[i] for i in range(4)]


@pytest.mark.parametrize("P", [CriticalTokunaga(2), CriticalTokunaga(3), GENERIC])
def test_prune_invariance_small(P):
    norm = 1 - exact_pruned_mass(Tree.empty(), P).value
    for code in ("L", "(L,L)", "(L,(L,L))"):
        t = Tree.from_code(code)
        pm = exact_pruned_mass(t, P, tol=Fraction(1, 10**12))
        assert pm.tail <= Fraction(1, 10**12)
        mu = exact_measure(t, P)
        assert abs(pm.value / norm - mu) <= Fraction(1, 10**9) + pm.tail / norm


def test_prune_invariance_report():
    rows = prune_invariance_check(TokunagaParams(T=(Fraction(1, 5),) * 3, p=Fraction(7, 10)))
    assert rows and all(r.ok for r in rows)


def test_prune_invariance_fails_for_wrong_measure():
    # sanity: the check is sharp enough to notice a mislabelled shape
    P = CriticalTokunaga(2)
    norm = 1 - exact_pruned_mass(Tree.empty(), P).value
    nu = exact_pruned_mass(Tree.cherry(), P).value / norm
    assert abs(nu - exact_measure(Tree.from_code("(L,(L,L))"), P)) > Fraction(1, 100)


def test_pruned_mass_budget():
    with pytest.raises(EnumerationBudgetError):
        exact_pruned_mass(Tree.from_code("((L,L),(L,L))"), CriticalTokunaga(3), tol=Fraction(1, 10**30), max_terms=16)


def test_shapes_by_leaves_counts():
    # Wedderburn-Etherington numbers
    d = shapes_by_leaves(10)
    assert [len(d[n]) for n in range(1, 11)] == [1, 1, 1, 2, 3, 6, 11, 23, 46, 98]
    assert d[3] == ["((L,L),L)"]
    assert all(canonical_code(Tree.from_code(c)) == c for v in d.values() for c in v)


def test_leaf_shapes_bound_c2():
    P = CriticalTokunaga(2)
    d = shapes_by_leaves(8)
    for n, codes in d.items():
        for c in codes:
            t = Tree.from_code(c)
            m = exact_measure(t, P)
            assert m == gw_measure(t) and m <= Fraction(1, 2**n)
