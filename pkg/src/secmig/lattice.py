"""Finite security lattices of principal sets and flow policies.

A *level* is the set of principals allowed to read; the empty set is the
most confidential level and the full universe the least.  A *flow policy*
is a relation between principals: ``(p, q)`` lets information readable by
``p`` flow to ``q``.  Policies are compared by the reflexive-transitive
closure of their relation, so larger relations are more permissive and sit
lower in the policy order.

All values are plain ``frozenset`` objects so they hash, compare and pickle
without ceremony.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import chain, combinations
from typing import FrozenSet, Iterable, Iterator, Tuple

Principal = str
Level = FrozenSet[Principal]
Pair = Tuple[Principal, Principal]
Policy = FrozenSet[Pair]

TOP_POLICY: Policy = frozenset()


class LatticeError(ValueError):
    """A principal outside the declared universe was used."""


def level(*principals: Principal) -> Level:
    return frozenset(principals)


def policy(*pairs: Pair) -> Policy:
    return frozenset(pairs)


def principals_of(pol: Policy) -> FrozenSet[Principal]:
    return frozenset(chain.from_iterable(pol))


@lru_cache(maxsize=4096)
def _transitive(pol: Policy) -> Policy:
    succ: dict[Principal, set[Principal]] = {}
    for p, q in pol:
        succ.setdefault(p, set()).add(q)
    out = set()
    for start in succ:
        seen = set()
        stack = [start]
        while stack:
            for nxt in succ.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        out.update((start, q) for q in seen)
    return frozenset(out)


def rt_closure(pol: Policy, universe: Iterable[Principal]) -> Policy:
    """Reflexive-transitive closure of ``pol`` over ``universe``."""
    uni = frozenset(universe)
    _check(uni, principals_of(pol))
    return _transitive(frozenset(pol)) | frozenset((p, p) for p in uni)


def _in_closure(pair: Pair, pol: Policy) -> bool:
    return pair[0] == pair[1] or pair in _transitive(frozenset(pol))


def upward_closure(pol: Policy, lvl: Level) -> Level:
    """Every principal reachable from some member of ``lvl`` through ``pol``."""
    reach = set(lvl)
    for p, q in _transitive(frozenset(pol)):
        if p in lvl:
            reach.add(q)
    return frozenset(reach)


def level_leq(l1: Level, l2: Level, pol: Policy = TOP_POLICY) -> bool:
    """``l1`` may flow to ``l2`` under ``pol``."""
    if not pol:
        return l1 >= l2
    return upward_closure(pol, l1) >= upward_closure(pol, l2)


def level_meet(l1: Level, l2: Level) -> Level:
    return frozenset(l1) | frozenset(l2)


def level_join(l1: Level, l2: Level, pol: Policy = TOP_POLICY) -> Level:
    if not pol:
        return frozenset(l1) & frozenset(l2)
    return upward_closure(pol, l1) & upward_closure(pol, l2)


def policy_leq(f1: Policy, f2: Policy) -> bool:
    """``f1`` is at least as permissive as ``f2``."""
    return all(_in_closure(pair, f1) for pair in f2)


def policy_equiv(f1: Policy, f2: Policy) -> bool:
    return policy_leq(f1, f2) and policy_leq(f2, f1)


def policy_meet(f1: Policy, f2: Policy) -> Policy:
    return frozenset(f1) | frozenset(f2)


def policy_join(f1: Policy, f2: Policy, universe: Iterable[Principal]) -> Policy:
    uni = frozenset(universe)
    return rt_closure(f1, uni) & rt_closure(f2, uni)


def policy_subtract(f1: Policy, f2: Policy) -> Policy:
    """Pseudo-subtraction, taken literally as set difference."""
    return frozenset(f1) - frozenset(f2)


def _check(universe: FrozenSet[Principal], used: Iterable[Principal]) -> None:
    bad = sorted(set(used) - universe)
    if bad:
        raise LatticeError(f"principal(s) {', '.join(bad)} not in universe")


class Lattice:
    """The pair of lattices generated by a fixed finite universe."""

    def __init__(self, universe: Iterable[Principal]):
        self.universe: Level = frozenset(universe)
        if not self.universe:
            raise LatticeError("universe must be non-empty")

    def __repr__(self) -> str:
        return f"Lattice({sorted(self.universe)!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Lattice) and other.universe == self.universe

    def __hash__(self) -> int:
        return hash(self.universe)

    @property
    def bot_level(self) -> Level:
        return self.universe

    @property
    def top_level(self) -> Level:
        return frozenset()

    @property
    def bot_policy(self) -> Policy:
        return frozenset((p, q) for p in self.universe for q in self.universe)

    @property
    def top_policy(self) -> Policy:
        return TOP_POLICY

    def check_level(self, lvl: Level) -> Level:
        _check(self.universe, lvl)
        return lvl

    def check_policy(self, pol: Policy) -> Policy:
        _check(self.universe, principals_of(pol))
        return pol

    def closure(self, pol: Policy) -> Policy:
        return rt_closure(pol, self.universe)

    def level_leq(self, l1: Level, l2: Level, pol: Policy = TOP_POLICY) -> bool:
        self.check_level(l1), self.check_level(l2), self.check_policy(pol)
        return level_leq(l1, l2, pol)

    def level_join(self, l1: Level, l2: Level, pol: Policy = TOP_POLICY) -> Level:
        self.check_level(l1), self.check_level(l2), self.check_policy(pol)
        return level_join(l1, l2, pol)

    def level_meet(self, l1: Level, l2: Level) -> Level:
        self.check_level(l1), self.check_level(l2)
        return level_meet(l1, l2)

    def policy_leq(self, f1: Policy, f2: Policy) -> bool:
        self.check_policy(f1), self.check_policy(f2)
        return policy_leq(f1, f2)

    def policy_meet(self, f1: Policy, f2: Policy) -> Policy:
        self.check_policy(f1), self.check_policy(f2)
        return policy_meet(f1, f2)

    def policy_join(self, f1: Policy, f2: Policy) -> Policy:
        self.check_policy(f1), self.check_policy(f2)
        return policy_join(f1, f2, self.universe)

    def policy_subtract(self, f1: Policy, f2: Policy) -> Policy:
        self.check_policy(f1), self.check_policy(f2)
        return policy_subtract(f1, f2)

    def levels(self) -> Iterator[Level]:
        """All ``2^n`` levels, smallest sets first."""
        members = sorted(self.universe)
        for k in range(len(members) + 1):
            for combo in combinations(members, k):
                yield frozenset(combo)

    def policies(self) -> Iterator[Policy]:
        """All subsets of ``universe x universe``; exponential, small universes only."""
        pairs = sorted(self.bot_policy)
        for k in range(len(pairs) + 1):
            for combo in combinations(pairs, k):
                yield frozenset(combo)


def format_level(lvl: Level) -> str:
    return "{" + ",".join(sorted(lvl)) + "}"


def format_policy(pol: Policy) -> str:
    return "{" + ", ".join(f"{p}<{q}" for p, q in sorted(pol)) + "}"
