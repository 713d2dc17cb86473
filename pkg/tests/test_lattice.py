from itertools import product

import pytest
from hypothesis import given, strategies as st

from secmig.lattice import (
    Lattice, LatticeError, format_level, format_policy, level_join, level_leq, level_meet,
    policy_equiv, policy_join, policy_leq, policy_meet, policy_subtract, rt_closure,
    upward_closure,
)

PQR = ("p", "q", "r")
UNI4 = ("p", "q", "r", "s")


def closure_oracle(pol, universe):
    """Naive fixpoint: add composed pairs until nothing changes."""
    rel = set(pol) | {(x, x) for x in universe}
    while True:
        extra = {(x, z) for x, y in rel for y2, z in rel if y == y2} - rel
        if not extra:
            return frozenset(rel)
        rel |= extra


def flows_oracle(l1, l2, pol, universe):
    """Every reader of ``l2`` is reachable from some reader of ``l1``."""
    star = closure_oracle(pol, universe)
    return all(any((p, q) in star for p in l1) for q in l2)


pairs4 = st.tuples(st.sampled_from(UNI4), st.sampled_from(UNI4))
policies4 = st.frozensets(pairs4, max_size=6)
levels4 = st.frozensets(st.sampled_from(UNI4))


def test_closure_of_empty_is_identity():
    assert rt_closure(frozenset(), ("p", "q")) == {("p", "p"), ("q", "q")}


def test_closure_adds_transitive_pair():
    got = rt_closure({("p", "q"), ("q", "r")}, PQR)
    # frozen from closure_oracle
    assert got == {("p", "q"), ("q", "r"), ("p", "r"), ("p", "p"), ("q", "q"), ("r", "r")}


def test_closure_rejects_foreign_principal():
    with pytest.raises(LatticeError):
        rt_closure({("p", "z")}, PQR)


@given(policies4)
def test_closure_matches_oracle(pol):
    assert rt_closure(pol, UNI4) == closure_oracle(pol, UNI4)


@given(policies4, policies4)
def test_closure_laws(f, g):
    star = rt_closure(f, UNI4)
    assert rt_closure(star, UNI4) == star
    assert f <= star
    assert rt_closure(f, UNI4) <= rt_closure(f | g, UNI4)


def test_upward_closure_examples():
    assert upward_closure({("p", "q")}, {"p"}) == {"p", "q"}
    assert upward_closure(frozenset(), {"p"}) == {"p"}
    assert upward_closure({("p", "q")}, frozenset()) == frozenset()


def test_level_leq_examples():
    assert level_leq({"p"}, {"q"}, {("p", "q")})
    assert not level_leq(frozenset(), {"p"}, frozenset())
    assert not level_leq({"p"}, {"q"})


@given(levels4, levels4, policies4)
def test_level_leq_matches_oracle(l1, l2, pol):
    assert level_leq(l1, l2, pol) == flows_oracle(l1, l2, pol, UNI4)


@given(levels4, levels4, policies4, policies4)
def test_level_leq_monotone_in_policy(l1, l2, f, g):
    if level_leq(l1, l2, f):
        assert level_leq(l1, l2, f | g)


def test_empty_policy_order_is_superset_on_four_principals():
    lat = Lattice(UNI4)
    for l1, l2 in product(lat.levels(), repeat=2):
        assert level_leq(l1, l2, frozenset()) == (l1 >= l2)


@given(policies4)
def test_level_leq_is_preorder(pol):
    lat = Lattice(UNI4)
    levels = list(lat.levels())
    for l1 in levels:
        assert level_leq(l1, l1, pol)
    for l1, l2, l3 in product(levels[::3], repeat=3):
        if level_leq(l1, l2, pol) and level_leq(l2, l3, pol):
            assert level_leq(l1, l3, pol)


def test_level_meet_and_join_examples():
    assert level_meet({"p"}, {"q"}) == {"p", "q"}
    assert level_join({"p"}, {"q"}, frozenset()) == frozenset()
    assert level_join({"p"}, {"q"}, {("p", "r"), ("q", "r")}) == {"r"}


def test_policy_leq_examples():
    lat = Lattice(PQR)
    assert all(policy_leq(lat.bot_policy, f) for f in [{("p", "q")}, {("r", "p")}, frozenset()])
    assert policy_leq({("q", "r")}, frozenset())
    assert policy_leq({("p", "q"), ("q", "r")}, {("p", "r")})
    assert not policy_leq({("p", "q")}, {("q", "p")})


def test_policy_operation_examples():
    assert policy_meet({("p", "q")}, {("q", "r")}) == {("p", "q"), ("q", "r")}
    assert policy_subtract({("p", "q"), ("q", "r")}, {("q", "r")}) == {("p", "q")}
    joined = policy_join({("p", "q")}, {("p", "q"), ("q", "r")}, PQR)
    # frozen from closure_oracle: both closures share only (p,q) and the diagonal
    assert joined == {("p", "q"), ("p", "p"), ("q", "q"), ("r", "r")}


def test_policy_order_laws_on_two_principals():
    lat = Lattice(("H", "L"))
    pols = list(lat.policies())
    assert len(pols) == 16
    for f in pols:
        assert policy_leq(f, f)
        assert policy_leq(lat.bot_policy, f) and policy_leq(f, lat.top_policy)
    for f, g in product(pols, repeat=2):
        meet, join = policy_meet(f, g), policy_join(f, g, lat.universe)
        assert policy_leq(meet, f) and policy_leq(meet, g)
        assert policy_leq(f, join) and policy_leq(g, join)
        assert policy_leq(policy_meet(policy_subtract(f, g), g), f)
        for h in pols:
            if policy_leq(f, g) and policy_leq(g, h):
                assert policy_leq(f, h)


@given(policies4, policies4)
def test_subtraction_residual(f, g):
    assert policy_leq(policy_meet(policy_subtract(f, g), g), f)


@given(policies4, policies4)
def test_policy_leq_matches_closure_containment(f, g):
    assert policy_leq(f, g) == (g <= closure_oracle(f, UNI4))
    assert policy_equiv(f, g) == (closure_oracle(f, UNI4) == closure_oracle(g, UNI4))


def test_lattice_checks_universe():
    lat = Lattice(("H", "L"))
    assert lat.bot_level == {"H", "L"} and lat.top_level == frozenset()
    with pytest.raises(LatticeError):
        lat.level_leq({"X"}, {"H"})
    with pytest.raises(LatticeError):
        lat.policy_leq({("H", "X")}, frozenset())
    with pytest.raises(LatticeError):
        Lattice(())


def test_formatting():
    assert format_level(frozenset({"q", "p"})) == "{p,q}"
    assert format_policy({("q", "r"), ("p", "q")}) == "{p<q, q<r}"
    assert format_policy(frozenset()) == "{}"
