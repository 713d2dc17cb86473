"""Type systems that confine declassification to what each domain allows.

A program is checked against an *allowed policy* ``A``: every ``flow F``
it executes must satisfy ``A <= F`` (``A`` at least as permissive as
``F``).  Testing ``allowed F`` widens ``A`` by ``F`` in the positive branch.

Two variants differ only at thread creation.  The static one checks a
migrating body against the policy of its destination domain, so it needs
the domain policies ``W``.  The relaxed one checks the body against the
most permissive policy and leaves the destination check to run time.
"""
from __future__ import annotations

from typing import Mapping, Optional, Tuple

from frozendict import frozendict

from .errors import TypeCheckError
from .lattice import Lattice, Level, Policy, policy_leq
from .syntax import (
    Abs, Allowed, App, Assign, BoolLit, Cond, Deref, Expr, Fix, Flow, Latent,
    RefCreate, RefName, Seq, TArrow, TBool, Thread, TRef, TUnit, Type, Unit,
    UNIT_T, BOOL_T, Var, domain_names,
)


class MissingDomainPolicy(KeyError):
    """Static checking met a thread creation at a domain with no policy."""


def conf_view(ty: Type, path: Tuple[str, ...] = ()) -> Type:
    if isinstance(ty, (TUnit, TBool)):
        return ty
    if isinstance(ty, TRef):
        return TRef(conf_view(ty.inner, path))
    if isinstance(ty, TArrow):
        if ty.latent.A is None:
            raise TypeCheckError("Annot", "arrow type lacks A", path)
        return TArrow(conf_view(ty.param, path), conf_view(ty.result, path), Latent(A=ty.latent.A))
    raise TypeError(f"not a type: {ty!r}")


class _Checker:
    def __init__(self, lat: Lattice, sigma, policies: Optional[Mapping[str, Policy]], relaxed: bool):
        self.lat = lat
        self.sigma = sigma
        self.policies = policies
        self.relaxed = relaxed

    def check(self, gamma, A: Policy, m: Expr, path) -> Type:
        if isinstance(m, Unit):
            return UNIT_T
        if isinstance(m, BoolLit):
            return BOOL_T
        if isinstance(m, Var):
            if m.name not in gamma:
                raise TypeCheckError("Var", f"unbound variable {m.name}", path)
            return gamma[m.name]
        if isinstance(m, RefName):
            if m.name not in self.sigma:
                raise TypeCheckError("Loc", f"reference {m.name} has no label", path)
            return TRef(conf_view(self.sigma[m.name][1], path))
        if isinstance(m, Abs):
            latent = A if m.latent is None or m.latent.A is None else m.latent.A
            param = conf_view(m.param_type, path)
            res = self.check(gamma.set(m.param, param), latent, m.body, path + ("Abs.body",))
            return TArrow(param, res, Latent(A=latent))
        if isinstance(m, Fix):
            ty = conf_view(m.self_type, path)
            got = self.check(gamma.set(m.name, ty), A, m.body, path + ("Rec.body",))
            if got != ty:
                raise TypeCheckError("Rec", "body type differs from the annotation", path)
            return ty
        if isinstance(m, App):
            fty = self.check(gamma, A, m.fn, path + ("App.fn",))
            aty = self.check(gamma, A, m.arg, path + ("App.arg",))
            if not isinstance(fty, TArrow):
                raise TypeCheckError("App", "operator is not a function", path)
            if fty.latent.A != A:
                raise TypeCheckError("App", "latent policy differs from the allowed policy", path)
            if aty != fty.param:
                raise TypeCheckError("App", "argument type differs from parameter type", path)
            return fty.result
        if isinstance(m, Seq):
            self.check(gamma, A, m.first, path + ("Seq.first",))
            return self.check(gamma, A, m.second, path + ("Seq.second",))
        if isinstance(m, RefCreate):
            theta = conf_view(m.ty, path)
            if self.check(gamma, A, m.init, path + ("Ref.init",)) != theta:
                raise TypeCheckError("Ref", "initial value type differs from the declared type", path)
            return TRef(theta)
        if isinstance(m, Deref):
            ty = self.check(gamma, A, m.ref, path + ("Der.ref",))
            if not isinstance(ty, TRef):
                raise TypeCheckError("Der", "dereferenced term is not a reference", path)
            return ty.inner
        if isinstance(m, Assign):
            ty = self.check(gamma, A, m.target, path + ("Ass.target",))
            vty = self.check(gamma, A, m.value, path + ("Ass.value",))
            if not isinstance(ty, TRef):
                raise TypeCheckError("Ass", "assigned term is not a reference", path)
            if vty != ty.inner:
                raise TypeCheckError("Ass", "value type differs from the reference content type", path)
            return UNIT_T
        if isinstance(m, Cond):
            if self.check(gamma, A, m.guard, path + ("Cond.guard",)) != BOOL_T:
                raise TypeCheckError("Cond", "guard is not boolean", path)
            tty = self.check(gamma, A, m.then, path + ("Cond.then",))
            fty = self.check(gamma, A, m.else_, path + ("Cond.else",))
            if tty != fty:
                raise TypeCheckError("Cond", "branch types differ", path)
            return tty
        if isinstance(m, Allowed):
            tty = self.check(gamma, A | m.policy, m.then, path + ("Allow.then",))
            fty = self.check(gamma, A, m.else_, path + ("Allow.else",))
            if tty != fty:
                raise TypeCheckError("Allow", "branch types differ", path)
            return tty
        if isinstance(m, Flow):
            if not policy_leq(A, m.policy):
                raise TypeCheckError("Flow", "declared flow is not allowed", path)
            return self.check(gamma, A, m.body, path + ("Flow.body",))
        if isinstance(m, Thread):
            if self.relaxed:
                target = self.lat.bot_policy
            else:
                if self.policies is None or m.domain not in self.policies:
                    raise MissingDomainPolicy(m.domain)
                target = self.policies[m.domain]
            if self.check(gamma, target, m.body, path + ("Mig.body",)) != UNIT_T:
                raise TypeCheckError("Mig", "migrating body does not have type unit", path)
            return UNIT_T
        raise TypeError(f"not an expression: {m!r}")


def _env(gamma: Mapping[str, Type]):
    return frozendict({x: conf_view(t, ("Gamma", x)) for x, t in gamma.items()})


def check_static(
    lat: Lattice,
    sigma: Mapping[str, Tuple[Level, Type]],
    gamma: Mapping[str, Type],
    policies: Mapping[str, Policy],
    A: Policy,
    m: Expr,
) -> Type:
    """Type of ``m`` under allowed policy ``A`` with destination checks.

    Raises :class:`MissingDomainPolicy` if ``m`` creates a thread at a
    domain absent from ``policies``.
    """
    missing = sorted(domain_names(m) - set(policies))
    if missing:
        raise MissingDomainPolicy(missing[0])
    return _Checker(lat, sigma, policies, relaxed=False).check(_env(gamma), A, m, ())


def check_relaxed(
    lat: Lattice,
    sigma: Mapping[str, Tuple[Level, Type]],
    gamma: Mapping[str, Type],
    A: Policy,
    m: Expr,
    expect_unit: bool = False,
) -> Type:
    """Like :func:`check_static` but migrating bodies are checked at the bottom policy."""
    ty = _Checker(lat, sigma, None, relaxed=True).check(_env(gamma), A, m, ())
    if expect_unit and ty != UNIT_T:
        raise TypeCheckError("Mig", "migrating body does not have type unit", ())
    return ty


def check_value_type(lat: Lattice, sigma, gamma, v: Expr, ty: Type,
                     policies=None, relaxed: bool = False) -> bool:
    try:
        if relaxed:
            got = check_relaxed(lat, sigma, gamma, frozenset(), v)
        else:
            got = check_static(lat, sigma, gamma, policies or {}, frozenset(), v)
        return got == conf_view(ty)
    except (TypeCheckError, MissingDomainPolicy):
        return False


def check_threads(net, cfg, relaxed: bool = False) -> dict:
    """Type every thread under the policy of the domain it sits at."""
    sigma, _ = cfg.labels(net)
    out = {}
    for m, prog in sorted(cfg.pool.items()):
        A = net.policy_of(cfg.tracker[m])
        if relaxed:
            out[m] = check_relaxed(net.lattice, sigma, net.gamma, A, prog)
        else:
            out[m] = check_static(net.lattice, sigma, net.gamma, net.policies, A, prog)
    return out
