"""Bounded checkers for the security properties of thread pools.

Every property is a game between two copies of a pool.  In each round an
attacker picks a thread on either side and a pair of memories that agree
on what an observer at level ``l`` may see; the defender must answer with
zero or one step of the other side that leads to memories and positions
agreeing on everything visible at ``l``.  A property holds up to depth
``k`` when the defender survives ``k`` rounds for every observer level.

Memories are quantified afresh in every round, as are positions for the
non-disclosure-for-networks game.  Quantification over memories ranges over
a finite :class:`StoreSpec`: boolean and unit cells take every value of
their type, other cells keep a fixed value.

Verdicts are exact for the bounded game, so ``NoViolationUpTo(k)`` is
evidence rather than proof.  Found violations carry a witness that can be
replayed with :func:`replay`.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from frozendict import frozendict

from .lattice import Level, Policy, level_leq, policy_leq
from .semantics import Configuration, Kind, NetworkSpec, StepLabel, step_thread
from .syntax import (
    FALSE, TRUE, UNIT, Expr, TBool, TUnit, context_policy, decompose, is_value,
    pretty, ref_names,
)

DEFAULT_DEPTH = 12
TOP: Policy = frozenset()

# ---------------------------------------------------------------------------
# Parameters and verdicts


@dataclass(frozen=True)
class StoreSpec:
    """Candidate values for each reference cell.

    Cells missing from ``values`` are enumerated by type when boolean or
    unit, and otherwise keep whatever value the configuration holds.
    """

    values: Mapping[str, Tuple[Expr, ...]] = field(default_factory=frozendict)

    def candidates(self, name: str, ty) -> Optional[Tuple[Expr, ...]]:
        if name in self.values:
            return tuple(self.values[name])
        if isinstance(ty, TBool):
            return (FALSE, TRUE)
        if isinstance(ty, TUnit):
            return (UNIT,)
        return None


@dataclass(frozen=True)
class ObsParams:
    depth: int = DEFAULT_DEPTH
    levels: Optional[Tuple[Level, ...]] = None
    trackers: Optional[Tuple[Mapping[str, str], ...]] = None
    store_spec: StoreSpec = field(default_factory=StoreSpec)
    jobs: int = 1


@dataclass(frozen=True)
class NoViolationUpTo:
    depth: int
    ok = True

    def to_json(self) -> dict:
        return {"verdict": "NoViolationUpTo", "depth": self.depth}


@dataclass(frozen=True)
class Violation:
    prop: str
    level: Optional[Level]
    witness: object
    ok = False

    def to_json(self) -> dict:
        return {
            "verdict": "Violation",
            "property": self.prop,
            "level": None if self.level is None else sorted(self.level),
            "witness": self.witness.to_json(),
        }


Verdict = Union[NoViolationUpTo, Violation]

# ---------------------------------------------------------------------------
# Witnesses


def _cfg_json(c: Configuration) -> dict:
    return {
        "tracker": dict(sorted(c.tracker.items())),
        "pool": {m: pretty(p) for m, p in sorted(c.pool.items())},
    }


def _store_json(s: Mapping[str, Expr]) -> dict:
    return {a: pretty(v) for a, v in sorted(s.items())}


@dataclass(frozen=True)
class Response:
    label: Optional[StepLabel]  # None when the defender stays put
    reason: Union[str, "GameWitness"]

    def to_json(self) -> dict:
        reason = self.reason if isinstance(self.reason, str) else self.reason.to_json()
        return {"step": None if self.label is None else self.label.to_json(), "fails": reason}


@dataclass(frozen=True)
class GameWitness:
    """An attacker move every defender answer to which loses.

    ``left``/``right`` are the two configurations before the round (store
    contents irrelevant), ``side`` says which one the attacker played.
    """

    left: Configuration
    right: Configuration
    side: int
    thread: str
    attacker_store: Mapping[str, Expr]
    defender_store: Mapping[str, Expr]
    defender_tracker: Optional[Mapping[str, str]]
    attacker_tracker: Optional[Mapping[str, str]]
    label: StepLabel
    responses: Tuple[Response, ...]

    def to_json(self) -> dict:
        return {
            "left": _cfg_json(self.left),
            "right": _cfg_json(self.right),
            "attacker_side": self.side,
            "thread": self.thread,
            "attacker_store": _store_json(self.attacker_store),
            "defender_store": _store_json(self.defender_store),
            "step": self.label.to_json(),
            "responses": [r.to_json() for r in self.responses],
        }

    def depth(self) -> int:
        deeper = [r.reason.depth() for r in self.responses if isinstance(r.reason, GameWitness)]
        return 1 + max(deeper, default=0)


@dataclass(frozen=True)
class PathWitness:
    """A run ending in an offending step (used for confinement)."""

    start: Configuration
    steps: Tuple[Tuple[str, Mapping[str, Expr], StepLabel], ...]
    message: str
    mode: str = "base"

    def to_json(self) -> dict:
        return {
            "start": _cfg_json(self.start),
            "steps": [{"thread": m, "store": _store_json(s), "step": lab.to_json()}
                      for m, s, lab in self.steps],
            "message": self.message,
        }


@dataclass(frozen=True)
class SimWitness:
    plain: Configuration
    annotated: Configuration
    store: Mapping[str, Expr]
    label: StepLabel
    reasons: Tuple[Tuple[Optional[StepLabel], Union[str, "SimWitness"]], ...]

    def to_json(self) -> dict:
        return {
            "plain": _cfg_json(self.plain),
            "annotated": _cfg_json(self.annotated),
            "store": _store_json(self.store),
            "step": self.label.to_json(),
            "candidates": [
                {"step": None if lab is None else lab.to_json(),
                 "fails": r if isinstance(r, str) else r.to_json()}
                for lab, r in self.reasons
            ],
        }


# ---------------------------------------------------------------------------
# Shared machinery


@dataclass(frozen=True)
class _Attacks:
    a: Configuration
    b: Configuration
    cells: List[str]
    sigma: Mapping
    upsilon: Mapping
    stores_b: List[frozendict]
    steps: List[tuple]


def _with_store(c: Configuration, store: frozendict) -> Configuration:
    # Hot path: skip dataclasses.replace and field validation.
    out = object.__new__(Configuration)
    for k in ("tracker", "pool", "sigma", "upsilon", "counter"):
        object.__setattr__(out, k, getattr(c, k))
    object.__setattr__(out, "store", store)
    return out


class _Universe:
    """Per-check helpers: labels, store enumeration, low equality."""

    def __init__(self, net: NetworkSpec, base: Configuration, spec: StoreSpec):
        self.net = net
        self.base = base
        self.spec = spec
        self._steps: Dict[tuple, object] = {}
        self._normal: Dict[Configuration, Configuration] = {}
        self._attacks: Dict[tuple, _Attacks] = {}
        self._answers: Dict[tuple, list] = {}

    def attacks(self, a: Configuration, b: Configuration, mode: str) -> "_Attacks":
        """Every attacker step of ``a`` against ``b``, over all memories."""
        key = (a, b, mode)
        hit = self._attacks.get(key)
        if hit is not None:
            return hit
        cells = self.cells(a, b)
        sigma = self.sigma(a, b)
        upsilon = self.upsilon(a, b)
        a = replace(a, sigma=frozendict(a.sigma | b.sigma), upsilon=frozendict(a.upsilon | b.upsilon))
        b = replace(b, sigma=a.sigma, upsilon=a.upsilon)
        reserved = _attacker_reserved(a, b)
        steps = []
        for m in sorted(a.pool):
            if is_value(a.pool[m]):
                continue
            for sa in self.stores(cells, a, b):
                ca = _with_store(a, sa)
                res = self.step(ca, m, mode, reserved)
                if res is not None:
                    steps.append((m, sa, ca, res[0], res[1]))
        hit = self._attacks[key] = _Attacks(a, b, cells, sigma, upsilon,
                                            self.stores(cells, b, a), steps)
        return hit

    def answers(self, ca: Configuration, cb: Configuration, mode: str):
        """Defender answers to an attacker at ``ca``: stay, or one step of a thread."""
        key = (ca, cb, mode)
        hit = self._answers.get(key)
        if hit is None:
            hit = [(None, cb)]
            reserved = _defender_reserved(ca, cb)
            for m in sorted(cb.pool):
                res = self.step(cb, m, mode, reserved)
                if res is not None:
                    hit.append((res[1], res[0]))
            self._answers[key] = hit
        return hit

    def step(self, c: Configuration, m: str, mode: str, reserved: frozenset):
        """Memoized :func:`_real_step`; games step the same configurations often."""
        key = (c, m, mode, reserved)
        try:
            return self._steps[key]
        except KeyError:
            res = self._steps[key] = _real_step(self.net, c, m, mode, reserved)
            return res

    def sigma(self, *cfgs: Configuration) -> Mapping:
        sig = dict(self.net.sigma)
        for c in cfgs:
            sig.update(c.sigma)
        return sig

    def upsilon(self, *cfgs: Configuration) -> Mapping:
        ups = dict(self.net.upsilon)
        for c in cfgs:
            ups.update(c.upsilon)
        return ups

    def cells(self, *cfgs: Configuration) -> List[str]:
        names = set(self.net.sigma)
        for c in cfgs:
            for prog in c.pool.values():
                names |= ref_names(prog)
        sig = self.sigma(*cfgs)
        frontier = list(names)
        while frontier:
            a = frontier.pop()
            if self._cands(a, sig) is None:
                for b in ref_names(self._fixed(a, cfgs)) - names:
                    names.add(b)
                    frontier.append(b)
        return sorted(names)

    def _cands(self, a: str, sig) -> Optional[Tuple[Expr, ...]]:
        return self.spec.candidates(a, sig[a][1])

    def _fixed(self, a: str, cfgs: Sequence[Configuration]) -> Expr:
        for c in cfgs:
            if a in c.store:
                return c.store[a]
        return self.base.store[a]

    def stores(self, cells: Sequence[str], own: Configuration, *others: Configuration) -> List[frozendict]:
        sig = self.sigma(own, *others)
        axes = []
        for a in cells:
            cands = self._cands(a, sig)
            axes.append(cands if cands is not None else (self._fixed(a, (own,) + others),))
        return [frozendict(zip(cells, vals)) for vals in itertools.product(*axes)]

    def normalize(self, c: Configuration) -> Configuration:
        """Drop enumerated cells and foreign labels so equal positions hash equal."""
        try:
            return self._normal[c]
        except KeyError:
            out = self._normal[c] = self._normalize(c)
            return out

    def _normalize(self, c: Configuration) -> Configuration:
        sig = self.sigma(c)
        fixed = {a: v for a, v in c.store.items() if self._cands(a, sig) is None}
        # Labels of names the other side minted are merged in when needed.
        own_refs = {a: lab for a, lab in c.sigma.items() if a in c.store}
        own_threads = {m: lab for m, lab in c.upsilon.items() if m in c.tracker}
        return Configuration(c.tracker, c.pool, frozendict(fixed), frozendict(own_refs),
                             frozendict(own_threads), 0)


_ABSENT = object()


@lru_cache(maxsize=65536)
def _observable(label: Level, level: Level, pol: Policy) -> bool:
    return level_leq(label, level, pol)


def _agree(v1: Mapping, v2: Mapping, label_of: Callable[[str], Optional[Level]],
           level: Level, pol: Policy) -> bool:
    for n in v1.keys() | v2.keys():
        lab = label_of(n)
        if lab is not None and _observable(lab, level, pol) and v1.get(n, _ABSENT) != v2.get(n, _ABSENT):
            return False
    return True


def low_equal(
    s1: Mapping[str, Expr], t1: Mapping[str, str],
    s2: Mapping[str, Expr], t2: Mapping[str, str],
    sigma: Mapping, upsilon: Mapping, level: Level, pol: Policy,
) -> bool:
    """Memories and positions agree on everything visible at ``level`` under ``pol``.

    Names without a label are ignored; a visible name present on one side
    only counts as a difference.
    """
    def ref_label(a):
        lab = sigma.get(a)
        return None if lab is None else lab[0]
    return (_agree(s1, s2, ref_label, level, pol)
            and _agree(t1, t2, upsilon.get, level, pol))


def _results_agree(net: NetworkSpec, c1: Configuration, c2: Configuration, level: Level) -> bool:
    """Low equality at ``level`` of two post-step states, labels from either side."""
    if c1.store == c2.store and c1.tracker == c2.tracker:
        return True

    def ref_label(a):
        lab = c2.sigma.get(a) or c1.sigma.get(a) or net.sigma.get(a)
        return None if lab is None else lab[0]

    def thread_label(m):
        return c2.upsilon.get(m) or c1.upsilon.get(m) or net.upsilon.get(m)

    return (_agree(c1.store, c2.store, ref_label, level, TOP)
            and _agree(c1.tracker, c2.tracker, thread_label, level, TOP))


def _sees_everything(u: "_Universe", c: Configuration, level: Level) -> bool:
    """The observer sees every cell and thread of ``c`` even under the top policy.

    Two copies of such a configuration stay related forever: any memory
    pair the attacker may pick is a pair of equal memories, and the
    defender replays the attacker's step.
    """
    sig = u.sigma(c)
    ups = u.upsilon(c)
    return (all(_observable(sig[a][0], level, TOP) for a in u.cells(c))
            and all(_observable(ups[m], level, TOP) for m in c.pool))


def _names(c: Configuration) -> frozenset:
    return frozenset(c.tracker) | frozenset(c.pool) | frozenset(c.store)


def _attacker_reserved(a: Configuration, b: Configuration) -> frozenset:
    return (_names(b) - _names(a)) | frozenset(b.tracker)


def _defender_reserved(ca: Configuration, cb: Configuration) -> frozenset:
    return _names(ca) - _names(cb)


def _merge_labels(target: Configuration, source: Configuration) -> Configuration:
    return replace(target, sigma=target.sigma | source.sigma, upsilon=target.upsilon | source.upsilon)


def _real_step(net, c: Configuration, m: str, mode: str, reserved: frozenset):
    res = step_thread(net, c, m, mode, reserved)
    if res is None or res[1].kind is Kind.BLOCKED:
        return None
    return res


def _declared(prog: Expr) -> Optional[Policy]:
    split = decompose(prog)
    return None if split is None else context_policy(split[0])


def _all_trackers(threads: Sequence[str], domains: Sequence[str]) -> List[frozendict]:
    return [frozendict(zip(threads, combo))
            for combo in itertools.product(domains, repeat=len(threads))]


def _levels(net: NetworkSpec, params: ObsParams) -> Tuple[Level, ...]:
    if params.levels is not None:
        return tuple(params.levels)
    return tuple(net.lattice.levels())


def _first_violation(fn: Callable, args: Sequence[tuple], jobs: int) -> Optional[Violation]:
    """Run ``fn`` over ``args`` and return the first violation in order."""
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(fn, *zip(*args)))
    else:
        results = [fn(*a) for a in args]
    for res in results:
        if res is not None:
            return res
    return None


# ---------------------------------------------------------------------------
# Bounded game solving


class _BoundedGame:
    """A game given by its positions and moves.

    ``moves(node)`` yields ``(meta, options)`` for every attacker move,
    where each option is ``(label, target)`` and ``target`` is either the
    next position or a string explaining why that answer loses outright.
    """

    def key(self, node):
        return node

    def moves(self, node) -> Iterable[Tuple[object, List[Tuple[Optional[StepLabel], object]]]]:
        raise NotImplementedError

    def witness(self, node, meta, responses):
        raise NotImplementedError


def _solve(game: _BoundedGame, roots: Sequence, depth: int):
    """First root the defender cannot hold for ``depth`` rounds, with a witness.

    Positions reachable in fewer than ``depth`` rounds are explored once;
    the ``j``-round approximations of the relation are then computed by
    iteration, so shared positions are never searched twice.
    """
    dist: Dict[object, int] = {}
    rep: Dict[object, object] = {}
    graph: Dict[object, frozenset] = {}
    frontier = []
    for r in roots:
        k = game.key(r)
        if k not in dist:
            dist[k], rep[k] = 0, r
            frontier.append(k)
    d = 0
    while frontier and d < depth:
        nxt = []
        for k in frontier:
            moves = set()
            for _, options in game.moves(rep[k]):
                succs = []
                for _, target in options:
                    if isinstance(target, str):
                        continue
                    sk = game.key(target)
                    if sk not in dist:
                        dist[sk], rep[sk] = d + 1, target
                        nxt.append(sk)
                    succs.append(sk)
                moves.add(frozenset(succs))
            graph[k] = frozenset(moves)
        frontier = nxt
        d += 1

    levels: List[Dict[object, bool]] = [{}]
    for j in range(1, depth + 1):
        prev = levels[-1]
        levels.append({
            k: all(any(j == 1 or prev[s] for s in succs) for succs in moves)
            for k, moves in graph.items() if dist[k] <= depth - j
        })

    def build(k, j):
        node = rep[k]
        for meta, options in game.moves(node):
            wins = any(not isinstance(t, str) and (j == 1 or levels[j - 1][game.key(t)])
                       for _, t in options)
            if not wins:
                responses = [(lab, t if isinstance(t, str) else build(game.key(t), j - 1))
                             for lab, t in options]
                return game.witness(node, meta, responses)
        raise AssertionError("no losing move at a losing position")

    if depth <= 0:
        return None
    for r in roots:
        k = game.key(r)
        if not levels[depth][k]:
            return r, build(k, depth)
    return None


# ---------------------------------------------------------------------------
# Bisimulation games on thread configurations


class _Game(_BoundedGame):
    """Game on pairs of thread configurations.

    ``premise`` maps the attacker's step label to the policy under which
    the initial memories must be low-equal.
    """

    def __init__(self, u: _Universe, level: Level, premise: Callable[[StepLabel], Policy],
                 mode: str = "base"):
        self.net = u.net
        self.u = u
        self.level = level
        self.premise = premise
        self.mode = mode

    def key(self, node):
        return frozenset(node)

    def moves(self, node):
        c1, c2 = node
        if c1 == c2 and _sees_everything(self.u, c1, self.level):
            return
        yield from self._side(c1, c2, 1)
        yield from self._side(c2, c1, 2)

    def witness(self, node, meta, responses):
        a, b, side, m, sa, sb, label = meta
        left, right = (a, b) if side == 1 else (b, a)
        return GameWitness(left, right, side, m, sa, sb, None, None, label,
                           tuple(Response(lab, r) for lab, r in responses))

    def _side(self, a: Configuration, b: Configuration, side: int):
        u = self.u
        att = u.attacks(a, b, self.mode)
        a, b = att.a, att.b
        by_policy: Dict[Policy, Optional[Dict[tuple, List[frozendict]]]] = {}
        for m, sa, ca, ca2, label in att.steps:
            pol = self.premise(label)
            if pol not in by_policy:
                by_policy[pol] = self._group(att, pol)
            groups = by_policy[pol]
            if groups is None:
                continue
            vis = groups["cells"]
            for sb in groups.get(tuple(sa[c] for c in vis), ()):
                cb = _merge_labels(_with_store(b, sb), ca2)
                yield (a, b, side, m, sa, sb, label), self._options(ca, ca2, cb)

    def _group(self, att, pol: Policy):
        """Defender memories indexed by what the observer sees under ``pol``.

        ``None`` when the positions themselves already differ.
        """
        if not _agree(att.a.tracker, att.b.tracker, att.upsilon.get, self.level, pol):
            return None
        vis = tuple(c for c in att.cells
                    if c in att.sigma and _observable(att.sigma[c][0], self.level, pol))
        groups: Dict[object, object] = {"cells": vis}
        for sb in att.stores_b:
            groups.setdefault(tuple(sb[c] for c in vis), []).append(sb)
        return groups

    def _options(self, ca, ca2, cb):
        u = self.u
        out = []
        for lab, cb2 in u.answers(ca, cb, self.mode):
            if _results_agree(u.net, ca2, cb2, self.level):
                out.append((lab, (u.normalize(ca2), u.normalize(cb2))))
            else:
                out.append((lab, "results differ at the observer level"))
        return out


def _initial_pairs(net: NetworkSpec, cfg: Configuration, params: ObsParams, level: Level):
    threads = sorted(cfg.pool)
    if params.trackers is not None:
        trackers = [frozendict(t) for t in params.trackers]
    else:
        trackers = _all_trackers(threads, net.domains)
    ups = net.upsilon | cfg.upsilon
    for t1, t2 in itertools.product(trackers, repeat=2):
        if _agree(t1, t2, ups.get, level, TOP):
            yield t1, t2


def _bisim_for_level(prop: str, net: NetworkSpec, cfg: Configuration,
                     params: ObsParams, level: Level,
                     u: Optional[_Universe] = None) -> Optional[Violation]:
    if prop == "dnd":
        premise = lambda label: label.declared  # noqa: E731
    else:
        premise = lambda label: net.policy_of(label.domain)  # noqa: E731
    game = _Game(u or _Universe(net, cfg, params.store_spec), level, premise)
    roots = [(game.u.normalize(replace(cfg, tracker=t1)), game.u.normalize(replace(cfg, tracker=t2)))
             for t1, t2 in _initial_pairs(net, cfg, params, level)]
    found = _solve(game, roots, params.depth)
    return None if found is None else Violation(prop, level, found[1])


def _bisim(prop: str, net: NetworkSpec, cfg: Configuration, params: ObsParams) -> Verdict:
    u = None if params.jobs > 1 else _Universe(net, cfg, params.store_spec)
    args = [(prop, net, cfg, params, lvl, u) for lvl in _levels(net, params)]
    found = _first_violation(_bisim_for_level, args, params.jobs)
    return found or NoViolationUpTo(params.depth)


def check_dnd(net: NetworkSpec, cfg: Configuration, params: ObsParams = ObsParams()) -> Verdict:
    """Distributed non-disclosure: declared flows justify each leak."""
    return _bisim("dnd", net, cfg, params)


def check_dni(net: NetworkSpec, cfg: Configuration, params: ObsParams = ObsParams()) -> Verdict:
    """Distributed noninterference: the current domain's policy justifies each leak."""
    return _bisim("dni", net, cfg, params)


# ---------------------------------------------------------------------------
# Non-disclosure for networks: positions are re-quantified every round


class _PoolGame(_BoundedGame):
    def __init__(self, u: _Universe, level: Level):
        self.net = u.net
        self.u = u
        self.level = level

    def key(self, node):
        return frozenset(node)

    def moves(self, node):
        p1, p2 = node
        if p1 == p2 and _sees_everything(self.u, p1, self.level):
            return
        yield from self._side(p1, p2, 1)
        yield from self._side(p2, p1, 2)

    def witness(self, node, meta, responses):
        a, b, side, m, sa, sb, tb, ta, label = meta
        left, right = (a, b) if side == 1 else (b, a)
        return GameWitness(left, right, side, m, sa, sb, tb, ta, label,
                           tuple(Response(lab, r) for lab, r in responses))

    def _side(self, a: Configuration, b: Configuration, side: int):
        net, u = self.net, self.u
        a = replace(a, sigma=frozendict(a.sigma | b.sigma), upsilon=frozendict(a.upsilon | b.upsilon))
        b = replace(b, sigma=a.sigma, upsilon=a.upsilon)
        cells = u.cells(a, b)
        sigma, upsilon = u.sigma(a), u.upsilon(a)
        stores_a = u.stores(cells, a, b)
        stores_b = u.stores(cells, b, a)
        trackers_a = _all_trackers(sorted(a.pool), net.domains)
        trackers_b = _all_trackers(sorted(b.pool), net.domains)
        reserved_a = _attacker_reserved(a, b)
        for m in sorted(a.pool):
            if is_value(a.pool[m]):
                continue
            for ta, sa in itertools.product(trackers_a, stores_a):
                ca = replace(a, tracker=ta, store=sa)
                res = u.step(ca, m, "base", reserved_a)
                if res is None:
                    continue
                ca2, label = res
                for tb, sb in itertools.product(trackers_b, stores_b):
                    if not low_equal(sa, ta, sb, tb, sigma, upsilon, self.level, label.declared):
                        continue
                    cb = _merge_labels(replace(b, tracker=tb, store=sb), ca2)
                    yield (a, b, side, m, sa, sb, tb, ta, label), self._options(ca, ca2, cb)

    def _options(self, ca, ca2, cb):
        u = self.u
        answers: List[Tuple[Optional[StepLabel], Configuration]] = [(None, cb)]
        reserved_b = _defender_reserved(ca, cb)
        for m in sorted(cb.pool):
            res = u.step(cb, m, "base", reserved_b)
            if res is not None:
                answers.append((res[1], res[0]))
        out = []
        for lab, cb2 in answers:
            sigma = u.sigma(ca2, cb2)
            upsilon = u.upsilon(ca2, cb2)
            if low_equal(ca2.store, ca2.tracker, cb2.store, cb2.tracker,
                         sigma, upsilon, self.level, TOP):
                out.append((lab, (self._pool_only(ca2), self._pool_only(cb2))))
            else:
                out.append((lab, "results differ at the observer level"))
        return out

    def _pool_only(self, c: Configuration) -> Configuration:
        return replace(self.u.normalize(c), tracker=frozendict())


def _ndn_for_level(net: NetworkSpec, cfg: Configuration, params: ObsParams,
                   level: Level, u: Optional[_Universe] = None) -> Optional[Violation]:
    game = _PoolGame(u or _Universe(net, cfg, params.store_spec), level)
    start = replace(game.u.normalize(cfg), tracker=frozendict())
    found = _solve(game, [(start, start)], params.depth)
    return None if found is None else Violation("ndn", level, found[1])


def check_ndn(net: NetworkSpec, cfg: Configuration, params: ObsParams = ObsParams()) -> Verdict:
    """Non-disclosure for networks: positions may change between rounds."""
    u = None if params.jobs > 1 else _Universe(net, cfg, params.store_spec)
    args = [(net, cfg, params, lvl, u) for lvl in _levels(net, params)]
    found = _first_violation(_ndn_for_level, args, params.jobs)
    return found or NoViolationUpTo(params.depth)


# ---------------------------------------------------------------------------
# Flow policy confinement


def check_fpc(net: NetworkSpec, cfg: Configuration, params: ObsParams = ObsParams(),
              mode: str = "base") -> Verdict:
    """Every step's declared flows are allowed by the policy of its domain.

    Explores every position assignment and, at each step, every memory,
    under the semantics of ``mode``.
    """
    u = _Universe(net, cfg, params.store_spec)
    if params.trackers is not None:
        trackers = [frozendict(t) for t in params.trackers]
    else:
        trackers = _all_trackers(sorted(cfg.pool), net.domains)
    frontier: List[Tuple[Configuration, Configuration, Tuple]] = []
    seen = set()
    for t in trackers:
        c = u.normalize(replace(cfg, tracker=t))
        if c not in seen:
            seen.add(c)
            frontier.append((c, c, ()))
    for _ in range(params.depth):
        nxt = []
        for c, start, steps in frontier:
            cells = u.cells(c)
            for m in sorted(c.pool):
                if is_value(c.pool[m]):
                    continue
                for s in u.stores(cells, c):
                    res = _real_step(net, replace(c, store=s), m, mode, frozenset())
                    if res is None:
                        continue
                    c2, label = res
                    path = steps + ((m, s, label),)
                    if not policy_leq(net.policy_of(label.domain), label.declared):
                        return Violation("fpc", None, PathWitness(
                            start, path, f"domain {label.domain} does not allow the declared flows", mode))
                    n2 = u.normalize(c2)
                    if n2 not in seen:
                        seen.add(n2)
                        nxt.append((n2, start, path))
        frontier = nxt
        if not frontier:
            break
    return NoViolationUpTo(params.depth)


# ---------------------------------------------------------------------------
# Simulation between a program and its annotated version


class _Simulation(_BoundedGame):
    """Positions are ``(plain, annotated)`` pools; the leader moves first."""

    def __init__(self, net: NetworkSpec, base: Configuration, spec: StoreSpec, reverse: bool):
        self.net = net
        self.u = _Universe(net, base, spec)
        self.reverse = reverse

    def _annot(self, sigma, store):
        from .decl_effect import annotate_store
        return annotate_store(self.net.lattice, sigma, self.net.gamma, store)

    def witness(self, node, meta, responses):
        cp, ca, s, label = meta
        return SimWitness(cp, ca, s, label, tuple(responses))

    def moves(self, node):
        from .errors import TypeCheckError
        net, u = self.net, self.u
        plain, annotated = node
        plain = _merge_labels(plain, annotated)
        annotated = _merge_labels(annotated, plain)
        sigma = u.sigma(plain)
        cells = u.cells(plain, annotated)
        threads = sorted(set(plain.pool) | set(annotated.pool))
        for t in _all_trackers(threads, net.domains):
            for s in u.stores(cells, plain):
                try:
                    s_hat = self._annot(sigma, s)
                except TypeCheckError:
                    continue
                cp = replace(plain, tracker=t, store=s)
                ca = replace(annotated, tracker=t, store=s_hat)
                if self.reverse:
                    (lead, lead_mode), (follow, follow_mode) = (cp, "base"), (ca, "annotated")
                else:
                    (lead, lead_mode), (follow, follow_mode) = (ca, "annotated"), (cp, "base")
                for m in sorted(lead.pool):
                    res = u.step(lead, m, lead_mode, frozenset())
                    if res is None:
                        continue
                    lc2, label = res
                    yield (cp, ca, s, label), self._options(follow, follow_mode, lc2, label)

    def _options(self, follow, follow_mode, lc2, label):
        from .errors import TypeCheckError
        u = self.u
        out = []
        for m2 in sorted(follow.pool):
            res2 = u.step(follow, m2, follow_mode, frozenset())
            if res2 is None:
                continue
            fc2, label2 = res2
            if label2 != label:
                out.append((label2, "labels differ"))
                continue
            if fc2.tracker != lc2.tracker:
                out.append((label2, "positions differ"))
                continue
            p2, a2 = (lc2, fc2) if self.reverse else (fc2, lc2)
            try:
                related_store = self._annot(u.sigma(p2, a2), p2.store) == a2.store
            except TypeCheckError:
                related_store = False
            if not related_store:
                out.append((label2, "memories are not related by annotation"))
                continue
            out.append((label2, (replace(u.normalize(p2), tracker=frozendict()),
                                 replace(u.normalize(a2), tracker=frozendict()))))
        return out


def check_simulation(
    net: NetworkSpec,
    plain: Configuration,
    annotated: Configuration,
    params: ObsParams = ObsParams(),
    reverse: bool = False,
) -> Verdict:
    """Each annotated step is matched by a plain step with the same label.

    With ``reverse=True`` the roles swap: plain steps must be matched by
    annotated ones, which fails whenever a migration is refused.
    """
    sim = _Simulation(net, plain, params.store_spec, reverse)
    p = replace(sim.u.normalize(plain), tracker=frozendict())
    a = replace(sim.u.normalize(annotated), tracker=frozendict())
    found = _solve(sim, [(p, a)], params.depth)
    if found is None:
        return NoViolationUpTo(params.depth)
    return Violation("simulation", None, found[1])


# ---------------------------------------------------------------------------
# Combination


@dataclass(frozen=True)
class CombinedVerdict:
    dnd: Verdict
    fpc: Verdict
    dni: Verdict

    @property
    def implication_holds(self) -> bool:
        return not (self.dnd.ok and self.fpc.ok) or self.dni.ok

    def to_json(self) -> dict:
        return {
            "dnd": self.dnd.to_json(),
            "fpc": self.fpc.to_json(),
            "dni": self.dni.to_json(),
            "implication_holds": self.implication_holds,
        }


def check_theorem_combination(net: NetworkSpec, cfg: Configuration,
                              params: ObsParams = ObsParams()) -> CombinedVerdict:
    return CombinedVerdict(check_dnd(net, cfg, params), check_fpc(net, cfg, params),
                           check_dni(net, cfg, params))


# ---------------------------------------------------------------------------
# Replay


def replay(net: NetworkSpec, verdict: Violation, params: ObsParams = ObsParams()) -> bool:
    """Re-execute a witness and confirm every recorded step and failure."""
    w = verdict.witness
    if isinstance(w, GameWitness):
        return _replay_game(net, w, verdict.level, verdict.prop)
    if isinstance(w, PathWitness):
        return _replay_path(net, w)
    if isinstance(w, SimWitness):
        return _replay_sim(net, w)
    raise TypeError(f"unknown witness {w!r}")


def _replay_game(net: NetworkSpec, w: GameWitness, level: Level, prop: str) -> bool:
    a, b = (w.left, w.right) if w.side == 1 else (w.right, w.left)
    a = replace(a, sigma=frozendict(a.sigma | b.sigma), upsilon=frozendict(a.upsilon | b.upsilon))
    b = replace(b, sigma=a.sigma, upsilon=a.upsilon)
    reserved = _attacker_reserved(a, b)
    if w.attacker_tracker is not None:
        a = replace(a, tracker=w.attacker_tracker)
        b = replace(b, tracker=w.defender_tracker)
    ca = replace(a, store=w.attacker_store)
    res = _real_step(net, ca, w.thread, "base", reserved)
    if res is None or res[1] != w.label:
        return False
    ca2, _ = res
    pol = net.policy_of(w.label.domain) if prop == "dni" else w.label.declared
    sig = dict(net.sigma) | dict(a.sigma)
    ups = dict(net.upsilon) | dict(a.upsilon)
    if not low_equal(w.attacker_store, a.tracker, w.defender_store, b.tracker, sig, ups, level, pol):
        return False
    cb = _merge_labels(replace(b, store=w.defender_store), ca2)
    expected = [None]
    for m in sorted(cb.pool):
        r = _real_step(net, cb, m, "base", _defender_reserved(ca, cb))
        if r is not None:
            expected.append(r[1])
    if [r.label for r in w.responses] != expected:
        return False
    return all(isinstance(r.reason, str) or _replay_game(net, r.reason, level, prop)
               for r in w.responses)


def _replay_path(net: NetworkSpec, w: PathWitness) -> bool:
    c = w.start
    for m, s, label in w.steps:
        res = _real_step(net, replace(c, store=s), m, w.mode, frozenset())
        if res is None or res[1] != label:
            return False
        c = res[0]
    last = w.steps[-1][2]
    return not policy_leq(net.policy_of(last.domain), last.declared)


def _replay_sim(net: NetworkSpec, w: SimWitness) -> bool:
    lead, follow = (w.annotated, w.plain)
    lead_mode, follow_mode = "annotated", "base"
    res = _real_step(net, lead, w.label.thread, lead_mode, frozenset())
    if res is None or res[1] != w.label:
        lead, follow = follow, lead
        lead_mode, follow_mode = follow_mode, lead_mode
        res = _real_step(net, lead, w.label.thread, lead_mode, frozenset())
        if res is None or res[1] != w.label:
            return False
    labels = [r[1] for m in sorted(follow.pool)
              if (r := _real_step(net, follow, m, follow_mode, frozenset())) is not None]
    return labels == [lab for lab, _ in w.reasons]
