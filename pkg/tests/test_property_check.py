import dataclasses
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from corpus import DOMAINS, H, HL, H_TO_L, L, LAT, LEVELS, POLICIES, TOP, Generator, network
from secmig.property_check import (
    NoViolationUpTo, ObsParams, PathWitness, StoreSpec, Violation, check_dnd, check_dni,
    check_fpc, check_ndn, check_simulation, check_theorem_combination, low_equal, replay,
)
from secmig.syntax import FALSE, TRUE, UNIT, Flow, Thread, parse_program

PARAMS = ObsParams(depth=12)
SIG1 = {"a": (H, None), "b": (HL, None)}
UPS = {"m": H, "n": HL}


def parse(text):
    return parse_program(text, ("H", "L"), ["a", "b"])


def single(text, domain="d2", level=HL, domains=None):
    return network([("m", level, domain, parse(text))], domains=domains)


def low_eq_oracle(s1, t1, s2, t2, level, pol):
    """Visible names: every reader in ``level`` is reached from a reader of the label."""
    star = set(pol) | {(p, p) for p in ("H", "L")}

    def visible(lab):
        return all(any((p, q) in star for p in lab) for q in level)

    cells = all(s1.get(a) == s2.get(a) for a, (lab, _) in SIG1.items() if visible(lab))
    threads = all(t1.get(m) == t2.get(m) for m, lab in UPS.items() if visible(lab))
    return cells and threads


def test_low_equal_examples():
    s = {"a": TRUE, "b": FALSE}
    t = {"m": "d1"}
    for lvl, pol in product(LEVELS, POLICIES):
        assert low_equal(s, t, s, t, SIG1, UPS, lvl, pol)
    assert low_equal(s, t, dict(s, a=FALSE), t, SIG1, UPS, L, TOP)
    assert not low_equal(s, t, dict(s, a=FALSE), t, SIG1, UPS, H, TOP)
    assert not low_equal(s, {"m": "d1"}, s, {"m": "d2"}, SIG1, {"m": H}, H, TOP)
    assert low_equal(s, {"m": "d1"}, s, {"m": "d2"}, SIG1, {"m": H}, L, TOP)
    # under H<L the secret cell flows to L observers
    assert not low_equal(s, t, dict(s, a=FALSE), t, SIG1, UPS, L, H_TO_L)


memories = st.fixed_dictionaries({"a": st.sampled_from([TRUE, FALSE]), "b": st.sampled_from([TRUE, FALSE])})
trackers = st.fixed_dictionaries({"m": st.sampled_from(["d1", "d2"]), "n": st.sampled_from(["d1", "d2"])})
states = st.tuples(memories, trackers)


@given(states, states, states, st.sampled_from(LEVELS), st.sampled_from(POLICIES))
def test_low_equal_matches_oracle_and_is_equivalence(x, y, z, lvl, pol):
    def eq(p, q):
        return low_equal(p[0], p[1], q[0], q[1], SIG1, UPS, lvl, pol)

    assert eq(x, y) == low_eq_oracle(x[0], x[1], y[0], y[1], lvl, pol)
    assert eq(x, x)
    assert eq(x, y) == eq(y, x)
    if eq(x, y) and eq(y, z):
        assert eq(x, z)


@pytest.mark.parametrize("check", [check_dnd, check_ndn, check_fpc, check_dni])
def test_value_pools_have_no_moves(check):
    net, cfg = network([("m", HL, "d1", UNIT), ("n", H, "d2", TRUE)])
    assert check(net, cfg, PARAMS) == NoViolationUpTo(12)


MIGRATION_LEAK = ("if !a then thread<{H,L}> (allowed {H<L} then b := true else b := false) at d1 "
                  "else thread<{H,L}> (allowed {H<L} then b := true else b := false) at d2")


def test_migration_leak_violates_dnd_for_public_observer():
    net, cfg = single(MIGRATION_LEAK, "d1")
    verdict = check_dnd(net, cfg, ObsParams(depth=12, levels=(HL,)))
    assert not verdict.ok and verdict.level == HL and replay(net, verdict)
    assert check_dnd(net, cfg, ObsParams(depth=12, levels=(H,))).ok


GUARDED = "thread<{H,L}> (allowed {H<L} then () else b := !a) at d1"


def test_guarded_leak_separates_ndn_from_dnd():
    net, cfg = single(GUARDED)
    assert check_dnd(net, cfg, PARAMS).ok
    verdict = check_ndn(net, cfg, PARAMS)
    assert not verdict.ok and replay(net, verdict)
    assert verdict.witness.attacker_tracker is not None


def declared_leak(F):
    return Thread(HL, Flow(F, parse("b := !a")), "d1")


def test_declared_leak_confinement_depends_on_declaration():
    for F in LAT.policies():
        net, cfg = network([("m", HL, "d2", declared_leak(F))])
        verdict = check_fpc(net, cfg, PARAMS)
        # the flow runs at d1 only: confined iff {H<L} covers F
        assert verdict.ok == (F <= H_TO_L | {("H", "H"), ("L", "L")})
        if not verdict.ok:
            assert isinstance(verdict.witness, PathWitness) and replay(net, verdict)
            last = verdict.witness.steps[-1][2]
            assert last.declared == F and last.domain == "d1"


def test_bottom_declaration_is_dnd_secure_but_not_confined():
    net, cfg = network([("m", HL, "d2", declared_leak(LAT.bot_policy))])
    assert check_dnd(net, cfg, PARAMS).ok
    assert not check_fpc(net, cfg, PARAMS).ok
    combined = check_theorem_combination(net, cfg, PARAMS)
    assert combined.implication_holds and not combined.fpc.ok


def test_top_declaration_is_confined_but_leaks():
    # d1 allows H<L, so the leak is neither undeclared to the domain nor interference
    net, cfg = network([("m", HL, "d2", declared_leak(TOP))])
    assert check_fpc(net, cfg, PARAMS).ok
    assert check_dni(net, cfg, PARAMS).ok
    dnd = check_dnd(net, cfg, PARAMS)
    assert not dnd.ok and replay(net, dnd)
    combined = check_theorem_combination(net, cfg, PARAMS)
    assert not combined.dnd.ok and combined.implication_holds


def test_dni_violation_regardless_of_declaration():
    # d2 forbids H<L, and the leak runs there
    for F in POLICIES:
        net, cfg = network([("m", HL, "d2", Thread(HL, Flow(F, parse("b := !a")), "d2"))])
        assert not check_dni(net, cfg, PARAMS).ok


def test_single_domain_leak_allowed_by_its_domain():
    prog = "if !a then thread<{H,L}> b := false at d1 else thread<{H,L}> b := true at d1"
    net, cfg = single(prog, "d1", domains={"d1": H_TO_L})
    assert check_dni(net, cfg, PARAMS).ok
    net, cfg = single(prog, "d2", domains={"d1": H_TO_L, "d2": TOP})
    assert not check_dni(net, cfg, PARAMS).ok


def test_replay_rejects_tampered_witness():
    net, cfg = network([("m", HL, "d2", declared_leak(LAT.bot_policy))])
    verdict = check_fpc(net, cfg, PARAMS)
    w = verdict.witness
    m, s, label = w.steps[-1]
    bad = dataclasses.replace(label, declared=frozenset())
    tampered = dataclasses.replace(verdict, witness=dataclasses.replace(w, steps=w.steps[:-1] + ((m, s, bad),)))
    assert not replay(net, tampered)
    net, cfg = single(MIGRATION_LEAK, "d1")
    game = check_dnd(net, cfg, ObsParams(depth=4, levels=(HL,)))
    assert replay(net, game)
    relabelled = dataclasses.replace(game.witness, label=dataclasses.replace(game.witness.label, domain="d3"))
    assert not replay(net, dataclasses.replace(game, witness=relabelled))


def test_verdict_json():
    net, cfg = network([("m", HL, "d2", declared_leak(LAT.bot_policy))])
    assert check_dnd(net, cfg, PARAMS).to_json() == {"verdict": "NoViolationUpTo", "depth": 12}
    out = check_fpc(net, cfg, PARAMS).to_json()
    assert out["verdict"] == "Violation" and out["property"] == "fpc"
    assert out["witness"]["steps"][-1]["step"]["declared"] == ["H<H", "H<L", "L<H", "L<L"]


def test_store_spec_restricts_enumeration():
    net, cfg = single("b := !a", "d2")
    assert not check_dnd(net, cfg, PARAMS).ok
    fixed = ObsParams(depth=12, store_spec=StoreSpec({"a": (FALSE,)}))
    assert check_dnd(net, cfg, fixed).ok


def test_parallel_search_gives_same_verdict():
    net, cfg = single(MIGRATION_LEAK, "d1")
    one = check_dnd(net, cfg, ObsParams(depth=6))
    two = check_dnd(net, cfg, ObsParams(depth=6, jobs=2))
    assert one.to_json() == two.to_json()


def test_simulation_examples():
    net, cfg = single("allowed {H<L} then b := !a else ()", "d1")
    assert check_simulation(net, cfg, cfg, PARAMS).ok
    assert check_simulation(net, cfg, cfg, PARAMS, reverse=True).ok
    net, cfg = single("thread<{H,L}> (flow bot in a := true) at d1")
    marked = dataclasses.replace(cfg, pool={"m": parse("thread<{H,L}> (flow bot in a := true) at d1 with bot")})
    assert check_simulation(net, cfg, marked, PARAMS).ok
    back = check_simulation(net, cfg, marked, PARAMS, reverse=True)
    assert not back.ok and replay(net, back)


def small_pool(seed):
    prog = Generator(seed, max_depth=2).program()
    return network([("m", Generator(seed).level(), sorted(DOMAINS)[seed % 3], prog)])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_verdicts_are_monotone_in_depth(seed):
    net, cfg = small_pool(seed)
    for check in (check_dnd, check_fpc):
        oks = [check(net, cfg, ObsParams(depth=k)).ok for k in range(1, 7)]
        assert oks == sorted(oks, reverse=True)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ndn_implies_dnd(seed):
    net, cfg = small_pool(seed)
    params = ObsParams(depth=6)
    if check_ndn(net, cfg, params).ok:
        assert check_dnd(net, cfg, params).ok


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_violations_replay(seed):
    net, cfg = small_pool(seed)
    params = ObsParams(depth=6)
    for check in (check_dnd, check_fpc, check_dni, check_ndn):
        verdict = check(net, cfg, params)
        if not verdict.ok:
            assert isinstance(verdict, Violation) and replay(net, verdict)


def test_levels_default_to_whole_universe():
    # only observers that see b but not a can tell the runs apart
    net, cfg = single("b := !a", "d2")
    assert check_dnd(net, cfg, PARAMS).level in (L, HL)
    for lvl in (TOP, H):
        assert check_dnd(net, cfg, ObsParams(levels=(lvl,))).ok
