"""Small-step semantics of thread pools that migrate between domains.

A network fixes the domains and their local flow policies (``W``), the
security labels of references (``Sigma``) and threads (``Upsilon``) and a
typing environment.  A configuration holds the tracker (thread -> domain),
the pool (thread -> program) and the store.  Fresh reference and thread
names are drawn from a counter kept in the configuration, so a run is a pure
function of its inputs and two runs that allocate in the same order mint
the same names.

Three modes differ only at thread creation:

``base``
    spawn unconditionally;
``runtimeCheck``
    spawn only if the relaxed confinement checker accepts the body at the
    target domain's policy;
``annotated``
    spawn only if the target domain's policy is at least as permissive as
    the ``with`` annotation.

A refused spawn produces a ``blockedMigration`` label and leaves the
configuration untouched.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, List, Mapping, Optional, Tuple

from frozendict import frozendict

from .lattice import Lattice, Level, Policy, policy_leq
from .syntax import (
    Allowed, App, Assign, Cond, Deref, Expr, Fix, Flow,
    RefCreate, RefName, Seq, Thread, Type, UNIT, context_policy, decompose,
    domain_names, free_vars, is_value, parse_level, parse_policy,
    parse_program, parse_type, plug, ref_names, substitute,
)

MODES = ("base", "runtimeCheck", "annotated")


class Kind(str, Enum):
    BETA = "beta"
    COND_TRUE = "condTrue"
    COND_FALSE = "condFalse"
    SEQ = "seq"
    FIX = "fix"
    FLOW_ELIM = "flowElim"
    DEREF = "deref"
    ASSIGN = "assign"
    REF_CREATE = "refCreate"
    ALLOWED_TRUE = "allowedTrue"
    ALLOWED_FALSE = "allowedFalse"
    SPAWN = "spawn"
    BLOCKED = "blockedMigration"


@dataclass(frozen=True)
class StepLabel:
    thread: str
    domain: str
    declared: Policy
    kind: Kind

    def to_json(self) -> dict:
        return {
            "thread": self.thread,
            "domain": self.domain,
            "declared": sorted(f"{p}<{q}" for p, q in self.declared),
            "kind": self.kind.value,
        }


@dataclass(frozen=True)
class NetworkSpec:
    """Static description of a network: lattice, domains and labels."""

    lattice: Lattice
    policies: Mapping[str, Policy]
    sigma: Mapping[str, Tuple[Level, Type]]
    upsilon: Mapping[str, Level]
    gamma: Mapping[str, Type] = field(default_factory=frozendict)

    def __post_init__(self):
        for name in ("policies", "sigma", "upsilon", "gamma"):
            object.__setattr__(self, name, frozendict(getattr(self, name)))
        for pol in self.policies.values():
            self.lattice.check_policy(pol)
        for lvl, _ in self.sigma.values():
            self.lattice.check_level(lvl)
        for lvl in self.upsilon.values():
            self.lattice.check_level(lvl)

    @property
    def domains(self) -> Tuple[str, ...]:
        return tuple(sorted(self.policies))

    def policy_of(self, domain: str) -> Policy:
        try:
            return self.policies[domain]
        except KeyError:
            raise KeyError(f"domain {domain!r} has no declared policy") from None


@dataclass(frozen=True)
class Configuration:
    """Tracker, pool and store, plus labels of names minted so far."""

    tracker: Mapping[str, str]
    pool: Mapping[str, Expr]
    store: Mapping[str, Expr]
    sigma: Mapping[str, Tuple[Level, Type]] = field(default_factory=frozendict)
    upsilon: Mapping[str, Level] = field(default_factory=frozendict)
    counter: int = 0

    def __post_init__(self):
        for name in ("tracker", "pool", "store", "sigma", "upsilon"):
            val = getattr(self, name)
            if not isinstance(val, frozendict):
                object.__setattr__(self, name, frozendict(val))

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.tracker, self.pool, self.store, self.sigma, self.upsilon, self.counter))
            object.__setattr__(self, "_hash", h)
        return h

    def __getstate__(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "_hash"}

    def labels(self, net: NetworkSpec) -> Tuple[Mapping, Mapping]:
        """Reference and thread labels, static ones overlaid with minted ones."""
        sig = net.sigma | self.sigma if self.sigma else net.sigma
        ups = net.upsilon | self.upsilon if self.upsilon else net.upsilon
        return sig, ups


def initial_configuration(
    net: NetworkSpec,
    tracker: Mapping[str, str],
    pool: Mapping[str, Expr],
    store: Mapping[str, Expr],
) -> Configuration:
    return Configuration(frozendict(tracker), frozendict(pool), frozendict(store))


# ---------------------------------------------------------------------------
# Single steps


def _fresh(prefix: str, counter: int, taken: Callable[[str], bool]) -> Tuple[str, int]:
    while taken(f"{prefix}#{counter}"):
        counter += 1
    return f"{prefix}#{counter}", counter + 1


def migration_allowed(
    net: NetworkSpec, cfg: Configuration, redex: Thread, mode: str
) -> Tuple[bool, str]:
    """Whether ``mode`` lets ``redex`` spawn; the string explains a refusal."""
    if mode == "base":
        return True, ""
    target = net.policy_of(redex.domain)
    if mode == "annotated":
        if redex.annot is None:
            raise ValueError("annotated mode met an unannotated thread creation")
        if policy_leq(target, redex.annot):
            return True, ""
        return False, "target policy does not allow the annotated flows"
    if mode == "runtimeCheck":
        from .confinement import TypeCheckError, check_relaxed
        if free_vars(redex.body):
            return False, "migrating body is open"
        sigma, _ = cfg.labels(net)
        try:
            check_relaxed(net.lattice, sigma, net.gamma, target, redex.body, expect_unit=True)
        except TypeCheckError as exc:
            return False, str(exc)
        return True, ""
    raise ValueError(f"unknown mode {mode!r}")


class Stuck(Exception):
    """Raised internally when a thread cannot step and is not a value."""


def _reduce(
    net: NetworkSpec, cfg: Configuration, m: str, mode: str, reserved: frozenset
) -> Tuple[Configuration, StepLabel]:
    prog = cfg.pool[m]
    split = decompose(prog)
    if split is None:
        raise Stuck(f"thread {m} is stuck at {type(prog).__name__}")
    ctx, redex = split
    domain = cfg.tracker[m]
    declared = context_policy(ctx)

    def done(residual: Expr, kind: Kind, **changes) -> Tuple[Configuration, StepLabel]:
        pool = changes.pop("pool", cfg.pool).set(m, plug(ctx, residual))
        return replace(cfg, pool=pool, **changes), StepLabel(m, domain, declared, kind)

    if isinstance(redex, App):
        fn = redex.fn
        return done(substitute(fn.body, fn.param, redex.arg), Kind.BETA)
    if isinstance(redex, Cond):
        if redex.guard.value:
            return done(redex.then, Kind.COND_TRUE)
        return done(redex.else_, Kind.COND_FALSE)
    if isinstance(redex, Seq):
        return done(redex.second, Kind.SEQ)
    if isinstance(redex, Fix):
        return done(substitute(redex.body, redex.name, redex), Kind.FIX)
    if isinstance(redex, Flow):
        return done(redex.body, Kind.FLOW_ELIM)
    if isinstance(redex, Deref):
        name = redex.ref.name
        if name not in cfg.store:
            raise Stuck(f"thread {m} reads unallocated reference {name}")
        return done(cfg.store[name], Kind.DEREF)
    if isinstance(redex, Assign):
        name = redex.target.name
        if name not in cfg.store:
            raise Stuck(f"thread {m} writes unallocated reference {name}")
        return done(UNIT, Kind.ASSIGN, store=cfg.store.set(name, redex.value))
    if isinstance(redex, RefCreate):
        sigma, _ = cfg.labels(net)
        label = (redex.level, redex.ty)

        def taken(n: str) -> bool:
            return n in cfg.store or n in reserved or sigma.get(n, label) != label

        name, counter = _fresh("r", cfg.counter, taken)
        return done(
            RefName(name), Kind.REF_CREATE,
            store=cfg.store.set(name, redex.init),
            sigma=cfg.sigma.set(name, label),
            counter=counter,
        )
    if isinstance(redex, Allowed):
        if policy_leq(net.policy_of(domain), redex.policy):
            return done(redex.then, Kind.ALLOWED_TRUE)
        return done(redex.else_, Kind.ALLOWED_FALSE)
    if isinstance(redex, Thread):
        ok, _ = migration_allowed(net, cfg, redex, mode)
        if not ok:
            return cfg, StepLabel(m, domain, declared, Kind.BLOCKED)
        _, upsilon = cfg.labels(net)

        def taken(n: str) -> bool:
            return (n in cfg.tracker or n in cfg.pool or n in reserved
                    or upsilon.get(n, redex.level) != redex.level)

        name, counter = _fresh("t", cfg.counter, taken)
        return done(
            UNIT, Kind.SPAWN,
            pool=cfg.pool.set(name, redex.body),
            tracker=cfg.tracker.set(name, redex.domain),
            upsilon=cfg.upsilon.set(name, redex.level),
            counter=counter,
        )
    raise Stuck(f"thread {m}: no rule for {type(redex).__name__}")


def step_thread(
    net: NetworkSpec,
    cfg: Configuration,
    m: str,
    mode: str = "base",
    reserved: frozenset = frozenset(),
) -> Optional[Tuple[Configuration, StepLabel]]:
    """One step of thread ``m``; ``None`` when it is a value or stuck.

    ``reserved`` names are never chosen as fresh names; the bisimulation
    games use it to keep names fresh with respect to the other side.
    """
    if m not in cfg.pool or is_value(cfg.pool[m]):
        return None
    try:
        return _reduce(net, cfg, m, mode, reserved)
    except Stuck:
        return None


def thread_status(net: NetworkSpec, cfg: Configuration, m: str, mode: str = "base") -> Tuple[str, str]:
    """Classify thread ``m`` as ``value``, ``runnable``, ``blocked`` or ``stuck``.

    The second component is a human-readable diagnostic.
    """
    prog = cfg.pool[m]
    if is_value(prog):
        return "value", ""
    try:
        _, label = _reduce(net, cfg, m, mode, frozenset())
    except Stuck as exc:
        return "stuck", str(exc)
    if label.kind is Kind.BLOCKED:
        _, redex = decompose(prog)
        return "blocked", migration_allowed(net, cfg, redex, mode)[1]
    return "runnable", ""


def step_all(
    net: NetworkSpec, cfg: Configuration, mode: str = "base", reserved: frozenset = frozenset()
) -> List[Tuple[str, Configuration, StepLabel]]:
    """Every real step of the pool, one per thread that can make progress."""
    out = []
    for m in sorted(cfg.pool):
        res = step_thread(net, cfg, m, mode, reserved)
        if res is not None and res[1].kind is not Kind.BLOCKED:
            out.append((m, res[0], res[1]))
    return out


# ---------------------------------------------------------------------------
# Runs


@dataclass
class Trace:
    labels: List[StepLabel]
    final: Configuration
    status: str  # "terminated", "blocked", "stuck" or "maxSteps"
    diagnostic: str = ""


def run(
    net: NetworkSpec,
    cfg: Configuration,
    mode: str = "base",
    scheduler: str = "roundRobin",
    max_steps: int = 1000,
    seed: int = 0,
) -> Trace:
    """Interleave thread steps until nothing can move or ``max_steps`` is hit.

    When the run halts with non-value threads left, a blocked thread wins
    over a stuck one for the reported status, and the last label of a
    blocked run is its ``blockedMigration`` label.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    rng = random.Random(seed)
    labels: List[StepLabel] = []
    last: Optional[str] = None
    for _ in range(max_steps):
        runnable = []
        blocked = []
        stuck = []
        for m in sorted(cfg.pool):
            if is_value(cfg.pool[m]):
                continue
            try:
                nxt, label = _reduce(net, cfg, m, mode, frozenset())
            except Stuck as exc:
                stuck.append((m, str(exc)))
                continue
            if label.kind is Kind.BLOCKED:
                blocked.append(label)
            else:
                runnable.append((m, nxt, label))
        if not runnable:
            if blocked:
                labels.append(blocked[0])
                m = blocked[0].thread
                return Trace(labels, cfg, "blocked", thread_status(net, cfg, m, mode)[1])
            if stuck:
                return Trace(labels, cfg, "stuck", stuck[0][1])
            return Trace(labels, cfg, "terminated")
        if scheduler == "firstRunnable":
            pick = runnable[0]
        elif scheduler == "roundRobin":
            later = [r for r in runnable if last is None or r[0] > last]
            pick = later[0] if later else runnable[0]
        elif scheduler == "seeded":
            pick = rng.choice(runnable)
        else:
            raise ValueError(f"unknown scheduler {scheduler!r}")
        last, cfg, label = pick
        labels.append(label)
    return Trace(labels, cfg, "maxSteps")


# ---------------------------------------------------------------------------
# Well-formedness and store compatibility


def well_formedness_errors(net: NetworkSpec, cfg: Configuration) -> List[str]:
    errs = []
    sigma, upsilon = cfg.labels(net)
    for m, prog in cfg.pool.items():
        if m not in cfg.tracker:
            errs.append(f"thread {m} has no position")
        if m not in upsilon:
            errs.append(f"thread {m} has no security level")
        for a in sorted(ref_names(prog) - set(cfg.store)):
            errs.append(f"thread {m} mentions unallocated reference {a}")
        for d in sorted(domain_names(prog) - set(net.policies)):
            errs.append(f"thread {m} mentions undeclared domain {d}")
    for m, d in cfg.tracker.items():
        if d not in net.policies:
            errs.append(f"thread {m} sits at undeclared domain {d}")
    for a, v in cfg.store.items():
        if a not in sigma:
            errs.append(f"reference {a} has no label")
        for b in sorted(ref_names(v) - set(cfg.store)):
            errs.append(f"store entry {a} mentions unallocated reference {b}")
        for d in sorted(domain_names(v) - set(net.policies)):
            errs.append(f"store entry {a} mentions undeclared domain {d}")
    return errs


def well_formed(net: NetworkSpec, cfg: Configuration) -> bool:
    return not well_formedness_errors(net, cfg)


FLAVORS = ("dnd", "fpcStatic", "fpcRelaxed", "annotated")


def compatible_store(
    net: NetworkSpec,
    store: Mapping[str, Expr],
    flavor: str = "dnd",
    sigma: Optional[Mapping[str, Tuple[Level, Type]]] = None,
) -> bool:
    """Every stored value has the type its reference is declared with."""
    if sigma is None:
        sigma = net.sigma
    for a, v in store.items():
        if a not in sigma or not value_compatible(net, sigma, a, v, flavor):
            return False
    return True


def value_compatible(net: NetworkSpec, sigma: Mapping, a: str, v: Expr, flavor: str) -> bool:
    lat = net.lattice
    _, ty = sigma[a]
    if flavor == "dnd":
        from .typecheck_dnd import check_value_type
        return check_value_type(lat, sigma, net.gamma, v, ty)
    if flavor in ("fpcStatic", "fpcRelaxed"):
        from .confinement import check_value_type
        return check_value_type(lat, sigma, net.gamma, v, ty,
                                policies=net.policies, relaxed=flavor == "fpcRelaxed")
    if flavor == "annotated":
        from .decl_effect import annotated_value_ok
        return annotated_value_ok(lat, sigma, net.gamma, v, ty)
    raise ValueError(f"unknown compatibility flavor {flavor!r}")


# ---------------------------------------------------------------------------
# Network files


@dataclass(frozen=True)
class LoadedNetwork:
    net: NetworkSpec
    config: Configuration
    thread_order: Tuple[str, ...]


def _level_from_json(raw, universe) -> Level:
    if isinstance(raw, str):
        return parse_level(raw, universe)
    return frozenset(raw)


def _policy_from_json(raw, universe) -> Policy:
    if isinstance(raw, str):
        return parse_policy(raw, universe)
    pairs = []
    for item in raw:
        p, _, q = item.partition("<")
        pairs.append((p.strip(), q.strip()))
    return frozenset(pairs)


def _program_text(raw: str, base: Optional[Path]) -> str:
    if base is not None and "\n" not in raw and len(raw) < 256:
        candidate = base / raw
        if candidate.is_file():
            return candidate.read_text()
    return raw


def network_from_dict(data: Mapping, base: Optional[Path] = None) -> LoadedNetwork:
    """Build a network and its initial configuration from decoded JSON."""
    universe = list(data["universe"])
    lat = Lattice(universe)
    policies = {d: _policy_from_json(p, universe) for d, p in data.get("domains", {}).items()}
    refs = data.get("refs", {})
    ref_list = list(refs)
    sigma = {}
    store = {}
    for a, spec in refs.items():
        sigma[a] = (_level_from_json(spec["level"], universe), parse_type(spec["type"], universe))
    for a, spec in refs.items():
        store[a] = parse_program(str(spec.get("init", "()")), universe, ref_list)
    gamma = {x: parse_type(t, universe) for x, t in data.get("gamma", {}).items()}
    upsilon = {}
    tracker = {}
    pool = {}
    order = []
    for th in data.get("threads", []):
        name = th["name"]
        order.append(name)
        upsilon[name] = _level_from_json(th["level"], universe)
        tracker[name] = th["domain"]
        pool[name] = parse_program(_program_text(th["program"], base), universe, ref_list)
    net = NetworkSpec(lat, policies, sigma, upsilon, gamma)
    return LoadedNetwork(net, Configuration(tracker, pool, store), tuple(order))


def load_network(path) -> LoadedNetwork:
    path = Path(path)
    return network_from_dict(json.loads(path.read_text()), path.parent)
