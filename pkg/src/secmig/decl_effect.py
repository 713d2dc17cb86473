"""Declassification effects and the annotating translation.

``annotate`` computes, for every subterm, the *declassification effect*: a
flow policy collecting the ``flow`` declarations the term may execute that
are not already justified by an enclosing ``allowed`` test.  Effects
combine by union; a value has the empty effect.  Each thread creation is
rewritten to ``thread<l> M at d with s`` where ``s`` is its body's effect,
so the destination can be checked with a single policy comparison at run
time.

Function types carry their latent effect.  They are ordered by
``(a -[s]-> b) <= (a -[s']-> b')`` when ``s`` is at least as permissive as
``s'`` and ``b <= b'``; two branches of a conditional may differ in latent
effects and their types meet by taking the union.
"""
from __future__ import annotations

from typing import Mapping, Tuple

from frozendict import frozendict

from .errors import TypeCheckError
from .lattice import Lattice, Level, Policy, policy_leq
from .syntax import (
    Abs, Allowed, App, Assign, BoolLit, Cond, Deref, Expr, Fix, Flow, Latent,
    RefCreate, RefName, Seq, TArrow, TBool, Thread, TRef, TUnit, Type, Unit,
    UNIT_T, BOOL_T, Var, erase_annotations,
)

EMPTY: Policy = frozenset()


def decl_view(ty: Type, path: Tuple[str, ...] = ()) -> Type:
    if isinstance(ty, (TUnit, TBool)):
        return ty
    if isinstance(ty, TRef):
        return TRef(decl_view(ty.inner, path))
    if isinstance(ty, TArrow):
        if ty.latent.s is None:
            raise TypeCheckError("Annot", "arrow type lacks s", path)
        return TArrow(decl_view(ty.param, path), decl_view(ty.result, path), Latent(s=ty.latent.s))
    raise TypeError(f"not a type: {ty!r}")


def type_leq(t1: Type, t2: Type) -> bool:
    if t1 == t2:
        return True
    return (isinstance(t1, TArrow) and isinstance(t2, TArrow)
            and t1.param == t2.param
            and policy_leq(t1.latent.s, t2.latent.s)
            and type_leq(t1.result, t2.result))


def type_compat(t1: Type, t2: Type) -> bool:
    if t1 == t2:
        return True
    return (isinstance(t1, TArrow) and isinstance(t2, TArrow)
            and t1.param == t2.param and type_compat(t1.result, t2.result))


def type_meet(t1: Type, t2: Type) -> Type:
    if t1 == t2:
        return t1
    if not type_compat(t1, t2):
        raise ValueError("meet of incompatible types")
    return TArrow(t1.param, type_meet(t1.result, t2.result),
                  Latent(s=t1.latent.s | t2.latent.s))


class _Annotator:
    def __init__(self, sigma):
        self.sigma = sigma

    def go(self, gamma, m: Expr, path) -> Tuple[Expr, Policy, Type]:
        if isinstance(m, Unit):
            return m, EMPTY, UNIT_T
        if isinstance(m, BoolLit):
            return m, EMPTY, BOOL_T
        if isinstance(m, Var):
            if m.name not in gamma:
                raise TypeCheckError("Var_I", f"unbound variable {m.name}", path)
            return m, EMPTY, gamma[m.name]
        if isinstance(m, RefName):
            if m.name not in self.sigma:
                raise TypeCheckError("Loc_I", f"reference {m.name} has no label", path)
            return m, EMPTY, TRef(decl_view(self.sigma[m.name][1], path))
        if isinstance(m, Abs):
            param = decl_view(m.param_type, path)
            body, s, res = self.go(gamma.set(m.param, param), m.body, path + ("Abs_I.body",))
            return Abs(m.param, m.param_type, body, m.latent), EMPTY, TArrow(param, res, Latent(s=s))
        if isinstance(m, Fix):
            ty = decl_view(m.self_type, path)
            body, s, got = self.go(gamma.set(m.name, ty), m.body, path + ("Rec_I.body",))
            if got != ty:
                raise TypeCheckError("Rec_I", "body type differs from the annotation", path)
            return Fix(m.name, m.self_type, body), s, ty
        if isinstance(m, App):
            fn, s, fty = self.go(gamma, m.fn, path + ("App_I.fn",))
            arg, s2, aty = self.go(gamma, m.arg, path + ("App_I.arg",))
            if not isinstance(fty, TArrow):
                raise TypeCheckError("App_I", "operator is not a function", path)
            if not type_compat(fty.param, aty):
                raise TypeCheckError("App_I", "argument type does not match parameter type", path)
            if not type_leq(fty.param, aty):
                raise TypeCheckError("App_I", "argument latent effects exceed the parameter's", path)
            return App(fn, arg), s | fty.latent.s | s2, fty.result
        if isinstance(m, Seq):
            a, s, _ = self.go(gamma, m.first, path + ("Seq_I.first",))
            b, s2, ty = self.go(gamma, m.second, path + ("Seq_I.second",))
            return Seq(a, b), s | s2, ty
        if isinstance(m, RefCreate):
            theta = decl_view(m.ty, path)
            init, s, ty = self.go(gamma, m.init, path + ("Ref_I.init",))
            if not type_compat(theta, ty):
                raise TypeCheckError("Ref_I", "initial value type does not match the declared type", path)
            if not type_leq(theta, ty):
                raise TypeCheckError("Ref_I", "initial value latent effects exceed the declared ones", path)
            return RefCreate(m.level, m.ty, init), s, TRef(theta)
        if isinstance(m, Deref):
            r, s, ty = self.go(gamma, m.ref, path + ("Der_I.ref",))
            if not isinstance(ty, TRef):
                raise TypeCheckError("Der_I", "dereferenced term is not a reference", path)
            return Deref(r), s, ty.inner
        if isinstance(m, Assign):
            t, s, ty = self.go(gamma, m.target, path + ("Ass_I.target",))
            v, s2, vty = self.go(gamma, m.value, path + ("Ass_I.value",))
            if not isinstance(ty, TRef):
                raise TypeCheckError("Ass_I", "assigned term is not a reference", path)
            if not type_compat(ty.inner, vty):
                raise TypeCheckError("Ass_I", "value type does not match the reference content type", path)
            if not type_leq(ty.inner, vty):
                raise TypeCheckError("Ass_I", "value latent effects exceed the reference content's", path)
            return Assign(t, v), s | s2, UNIT_T
        if isinstance(m, Cond):
            g, s, gty = self.go(gamma, m.guard, path + ("Cond_I.guard",))
            a, st, tty = self.go(gamma, m.then, path + ("Cond_I.then",))
            b, sf, fty = self.go(gamma, m.else_, path + ("Cond_I.else",))
            if gty != BOOL_T:
                raise TypeCheckError("Cond_I", "guard is not boolean", path)
            if not type_compat(tty, fty):
                raise TypeCheckError("Cond_I", "branch types are not compatible", path)
            return Cond(g, a, b), s | st | sf, type_meet(tty, fty)
        if isinstance(m, Allowed):
            a, st, tty = self.go(gamma, m.then, path + ("Allow_I.then",))
            b, sf, fty = self.go(gamma, m.else_, path + ("Allow_I.else",))
            if not type_compat(tty, fty):
                raise TypeCheckError("Allow_I", "branch types are not compatible", path)
            return Allowed(m.policy, a, b), (st - m.policy) | sf, type_meet(tty, fty)
        if isinstance(m, Flow):
            body, s, ty = self.go(gamma, m.body, path + ("Flow_I.body",))
            return Flow(m.policy, body), s | m.policy, ty
        if isinstance(m, Thread):
            body, s, ty = self.go(gamma, m.body, path + ("Mig_I.body",))
            if ty != UNIT_T:
                raise TypeCheckError("Mig_I", "migrating body does not have type unit", path)
            return Thread(m.level, body, m.domain, s), EMPTY, UNIT_T
        raise TypeError(f"not an expression: {m!r}")


def annotate(
    lat: Lattice,
    sigma: Mapping[str, Tuple[Level, Type]],
    gamma: Mapping[str, Type],
    m: Expr,
) -> Tuple[Expr, Policy, Type]:
    """Annotated program, declassification effect and type of ``m``.

    Existing ``with`` annotations are discarded and recomputed.
    """
    env = frozendict({x: decl_view(t, ("Gamma", x)) for x, t in gamma.items()})
    return _Annotator(sigma).go(env, erase_annotations(m), ())


def annotate_value(lat: Lattice, sigma, gamma, v: Expr, ty: Type) -> Expr:
    """Annotate a stored value, checking it fits the declared content type."""
    out, s, got = annotate(lat, sigma, gamma, v)
    want = decl_view(ty)
    if s != EMPTY:
        raise TypeCheckError("Store", "stored value has a non-empty effect", ())
    if not (type_compat(want, got) and type_leq(want, got)):
        raise TypeCheckError("Store", "stored value type does not fit the declared type", ())
    return out


def annotate_store(
    lat: Lattice,
    sigma: Mapping[str, Tuple[Level, Type]],
    gamma: Mapping[str, Type],
    store: Mapping[str, Expr],
) -> frozendict:
    out = {}
    for a, v in store.items():
        if a not in sigma:
            raise TypeCheckError("Store", f"reference {a} has no label", (a,))
        try:
            out[a] = annotate_value(lat, sigma, gamma, v, sigma[a][1])
        except TypeCheckError as exc:
            raise TypeCheckError(exc.rule, exc.condition, (a,) + exc.path) from None
    return frozendict(out)


def annotated_value_ok(lat: Lattice, sigma, gamma, v: Expr, ty: Type) -> bool:
    """``v`` is the annotation of some value fitting ``ty``."""
    try:
        return annotate_value(lat, sigma, gamma, erase_annotations(v), ty) == v
    except TypeCheckError:
        return False
