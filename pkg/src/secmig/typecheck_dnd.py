"""Type and effect system that enforces distributed noninterference.

Judgements have the shape ``Gamma |-[j, F] M : s, tau``: ``j`` is the
security level of the running thread, ``F`` the flow policy in scope and
``s = (r, w, t)`` the effect, recording an upper bound on the levels read,
a lower bound on the levels written and an upper bound on the levels that
influence termination or the thread's position.

Effects join componentwise in the base lattice (``r`` and ``t`` go up,
``w`` goes down); side conditions compare levels under the current ``F``.
Lambdas take their latent ``j``/``F`` from their ``[...]`` annotation when
present and otherwise from the judgement they are checked in.
"""
from __future__ import annotations

from typing import Mapping, NamedTuple, Tuple

from frozendict import frozendict

from .errors import TypeCheckError
from .lattice import Lattice, Level, Policy, level_leq
from .syntax import (
    Abs, Allowed, App, Assign, BoolLit, Cond, Deref, Expr, Fix, Flow, Latent,
    RefCreate, RefName, Seq, TArrow, TBool, Thread, TRef, TUnit, Type, Unit,
    UNIT_T, BOOL_T, Var,
)


class Effect(NamedTuple):
    r: Level
    w: Level
    t: Level


def effect_bot(lat: Lattice) -> Effect:
    """Nothing read, nothing written, nothing observable via termination."""
    return Effect(lat.bot_level, lat.top_level, lat.bot_level)


def effect_top(lat: Lattice) -> Effect:
    return Effect(lat.top_level, lat.bot_level, lat.top_level)


def effect_join(*effs: Effect) -> Effect:
    r, w, t = effs[0]
    for e in effs[1:]:
        r, w, t = r & e.r, w | e.w, t & e.t
    return Effect(r, w, t)


def effect_leq(s1: Effect, s2: Effect, pol: Policy = frozenset()) -> bool:
    return (level_leq(s1.r, s2.r, pol)
            and level_leq(s2.w, s1.w, pol)
            and level_leq(s1.t, s2.t, pol))


def dnd_view(ty: Type, path: Tuple[str, ...] = ()) -> Type:
    """Keep only what this system reads from a type, demanding it is present."""
    if isinstance(ty, (TUnit, TBool)):
        return ty
    if isinstance(ty, TRef):
        if ty.level is None:
            raise TypeCheckError("Annot", "reference type lacks a security level", path)
        return TRef(dnd_view(ty.inner, path), ty.level)
    if isinstance(ty, TArrow):
        lat = ty.latent
        missing = [f for f in ("j", "F", "eff") if getattr(lat, f) is None]
        if missing:
            raise TypeCheckError("Annot", f"arrow type lacks {', '.join(missing)}", path)
        return TArrow(dnd_view(ty.param, path), dnd_view(ty.result, path),
                      Latent(j=lat.j, F=lat.F, eff=tuple(lat.eff)))
    raise TypeError(f"not a type: {ty!r}")


class _Checker:
    def __init__(self, lat: Lattice, sigma: Mapping[str, Tuple[Level, Type]]):
        self.lat = lat
        self.sigma = sigma
        self.bot = effect_bot(lat)

    def leq(self, l1: Level, l2: Level, pol: Policy, rule: str, what: str, path) -> None:
        if not level_leq(l1, l2, pol):
            raise TypeCheckError(rule, what, path)

    def check(self, gamma, j: Level, F: Policy, m: Expr, path) -> Tuple[Effect, Type]:
        if isinstance(m, Unit):
            return self.bot, UNIT_T
        if isinstance(m, BoolLit):
            return self.bot, BOOL_T
        if isinstance(m, Var):
            if m.name not in gamma:
                raise TypeCheckError("Var", f"unbound variable {m.name}", path)
            return self.bot, gamma[m.name]
        if isinstance(m, RefName):
            if m.name not in self.sigma:
                raise TypeCheckError("Loc", f"reference {m.name} has no label", path)
            lvl, ty = self.sigma[m.name]
            return self.bot, TRef(dnd_view(ty, path), lvl)
        if isinstance(m, Abs):
            lat = m.latent or Latent()
            jl = j if lat.j is None else lat.j
            Fl = F if lat.F is None else lat.F
            param = dnd_view(m.param_type, path)
            s, res = self.check(gamma.set(m.param, param), jl, Fl, m.body, path + ("Abs.body",))
            return self.bot, TArrow(param, res, Latent(j=jl, F=Fl, eff=tuple(s)))
        if isinstance(m, Fix):
            ty = dnd_view(m.self_type, path)
            s, got = self.check(gamma.set(m.name, ty), j, F, m.body, path + ("Rec.body",))
            if got != ty:
                raise TypeCheckError("Rec", "body type differs from the annotation", path)
            return s, ty
        if isinstance(m, App):
            s, fty = self.check(gamma, j, F, m.fn, path + ("App.fn",))
            s2, aty = self.check(gamma, j, F, m.arg, path + ("App.arg",))
            if not isinstance(fty, TArrow):
                raise TypeCheckError("App", "operator is not a function", path)
            if fty.latent.j != j or fty.latent.F != F:
                raise TypeCheckError("App", "latent level or policy differs from the context", path)
            if aty != fty.param:
                raise TypeCheckError("App", "argument type differs from parameter type", path)
            lat_eff = Effect(*fty.latent.eff)
            self.leq(s.t, s2.w, F, "App", "operator termination exceeds argument writes", path)
            self.leq(s.r, lat_eff.w, F, "App", "operator reads exceed latent writes", path)
            self.leq(s2.r, lat_eff.w, F, "App", "argument reads exceed latent writes", path)
            extra = Effect(self.lat.bot_level, self.lat.top_level, s.r & s2.r)
            return effect_join(s, lat_eff, s2, extra), fty.result
        if isinstance(m, Seq):
            s, _ = self.check(gamma, j, F, m.first, path + ("Seq.first",))
            s2, ty = self.check(gamma, j, F, m.second, path + ("Seq.second",))
            self.leq(s.t, s2.w, F, "Seq", "first termination exceeds second writes", path)
            return effect_join(s, s2), ty
        if isinstance(m, RefCreate):
            theta = dnd_view(m.ty, path)
            s, ty = self.check(gamma, j, F, m.init, path + ("Ref.init",))
            if ty != theta:
                raise TypeCheckError("Ref", "initial value type differs from the declared type", path)
            self.leq(s.r, m.level, F, "Ref", "reads exceed the reference level", path)
            self.leq(s.t, m.level, F, "Ref", "termination exceeds the reference level", path)
            eff = Effect(self.lat.bot_level, m.level, self.lat.bot_level)
            return effect_join(s, eff), TRef(theta, m.level)
        if isinstance(m, Deref):
            s, ty = self.check(gamma, j, F, m.ref, path + ("Der.ref",))
            if not isinstance(ty, TRef):
                raise TypeCheckError("Der", "dereferenced term is not a reference", path)
            eff = Effect(ty.level, self.lat.top_level, self.lat.bot_level)
            return effect_join(s, eff), ty.inner
        if isinstance(m, Assign):
            s, ty = self.check(gamma, j, F, m.target, path + ("Ass.target",))
            s2, vty = self.check(gamma, j, F, m.value, path + ("Ass.value",))
            if not isinstance(ty, TRef):
                raise TypeCheckError("Ass", "assigned term is not a reference", path)
            if vty != ty.inner:
                raise TypeCheckError("Ass", "value type differs from the reference content type", path)
            self.leq(s.t, s2.w, F, "Ass", "target termination exceeds value writes", path)
            self.leq(s.r, ty.level, F, "Ass", "target reads exceed the reference level", path)
            self.leq(s2.r, ty.level, F, "Ass", "value reads exceed the reference level", path)
            eff = Effect(self.lat.bot_level, ty.level, self.lat.bot_level)
            return effect_join(s, s2, eff), UNIT_T
        if isinstance(m, Cond):
            s, gty = self.check(gamma, j, F, m.guard, path + ("Cond.guard",))
            st, tty = self.check(gamma, j, F, m.then, path + ("Cond.then",))
            sf, fty = self.check(gamma, j, F, m.else_, path + ("Cond.else",))
            if gty != BOOL_T:
                raise TypeCheckError("Cond", "guard is not boolean", path)
            if tty != fty:
                raise TypeCheckError("Cond", "branch types differ", path)
            self.leq(s.r, st.w, F, "Cond", "guard reads exceed then-branch writes", path)
            self.leq(s.r, sf.w, F, "Cond", "guard reads exceed else-branch writes", path)
            extra = Effect(self.lat.bot_level, self.lat.top_level, s.r)
            return effect_join(s, st, sf, extra), tty
        if isinstance(m, Allowed):
            st, tty = self.check(gamma, j, F, m.then, path + ("Allow.then",))
            sf, fty = self.check(gamma, j, F, m.else_, path + ("Allow.else",))
            if tty != fty:
                raise TypeCheckError("Allow", "branch types differ", path)
            self.leq(j, st.w, F, "Allow", "thread level exceeds then-branch writes", path)
            self.leq(j, sf.w, F, "Allow", "thread level exceeds else-branch writes", path)
            return effect_join(st, sf, Effect(j, self.lat.top_level, j)), tty
        if isinstance(m, Flow):
            return self.check(gamma, j, F | m.policy, m.body, path + ("Flow.body",))
        if isinstance(m, Thread):
            s, ty = self.check(gamma, m.level, frozenset(), m.body, path + ("Mig.body",))
            if ty != UNIT_T:
                raise TypeCheckError("Mig", "migrating body does not have type unit", path)
            eff = Effect(self.lat.bot_level, m.level | s.w, self.lat.bot_level)
            return eff, UNIT_T
        raise TypeError(f"not an expression: {m!r}")


def check(
    lat: Lattice,
    sigma: Mapping[str, Tuple[Level, Type]],
    gamma: Mapping[str, Type],
    j: Level,
    F: Policy,
    m: Expr,
) -> Tuple[Effect, Type]:
    """Effect and type of ``m`` at thread level ``j`` under policy ``F``.

    Raises :class:`TypeCheckError` when no derivation exists.
    """
    env = frozendict({x: dnd_view(t, ("Gamma", x)) for x, t in gamma.items()})
    return _Checker(lat, sigma).check(env, j, F, m, ())


def check_value_type(lat: Lattice, sigma, gamma, v: Expr, ty: Type) -> bool:
    """``v`` has type ``ty``; used for store compatibility."""
    try:
        _, got = check(lat, sigma, gamma, lat.bot_level, frozenset(), v)
        return got == dnd_view(ty)
    except TypeCheckError:
        return False


def check_threads(net, cfg) -> dict:
    """Type every thread at its own level under the empty policy."""
    sigma, upsilon = cfg.labels(net)
    return {m: check(net.lattice, sigma, net.gamma, upsilon[m], frozenset(), prog)
            for m, prog in sorted(cfg.pool.items())}
