"""Abstract syntax, concrete syntax and evaluation contexts.

The expression language is a call-by-value lambda calculus with references,
scoped flow declarations (``flow F in M``), a context test on the current
domain's policy (``allowed F then M else N``) and thread creation at a
named domain (``thread<l> M at d``).  The annotated variant used by the
declassification-effect system adds ``with F`` to thread creation.

Concrete syntax, loosest binding first::

    M ::= \\x:T. M | \\x:T [latent]. M | fix x:T. M
        | if M then M else M | flow P in M | allowed P then M else M
        | A ; M                       (right associative)
    A ::= B := A | B
    B ::= C C ...                     (application, left associative)
    C ::= !C | ref<L, T> C | atom
    atom ::= () | true | false | ident | thread<L> M at d [with P] | (M)

Keyword forms extend as far right as possible, so ``\\x:unit. a; b`` is a
lambda whose body is the sequence.  ``#`` starts a comment running to the
end of the line.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

from .lattice import Level, Policy, format_level, format_policy

# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class Latent:
    """Latent annotations on arrows and lambdas.

    Each type system reads its own fields: ``j``/``F``/``eff`` for the
    noninterference system, ``A`` for confinement, ``s`` for the
    declassification-effect system.  Missing fields are ``None``.
    """

    j: Optional[Level] = None
    F: Optional[Policy] = None
    eff: Optional[Tuple[Level, Level, Level]] = None
    A: Optional[Policy] = None
    s: Optional[Policy] = None

    def is_empty(self) -> bool:
        return all(getattr(self, f) is None for f in LATENT_FIELDS)


LATENT_FIELDS = ("j", "F", "eff", "A", "s")


@dataclass(frozen=True)
class TUnit:
    pass


@dataclass(frozen=True)
class TBool:
    pass


@dataclass(frozen=True)
class TRef:
    inner: "Type"
    level: Optional[Level] = None


@dataclass(frozen=True)
class TArrow:
    param: "Type"
    result: "Type"
    latent: Latent = field(default_factory=Latent)


Type = Union[TUnit, TBool, TRef, TArrow]

UNIT_T = TUnit()
BOOL_T = TBool()

# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Unit:
    pass


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class RefName:
    name: str


@dataclass(frozen=True)
class Abs:
    param: str
    param_type: Type
    body: "Expr"
    latent: Optional[Latent] = None


@dataclass(frozen=True)
class Fix:
    name: str
    self_type: Type
    body: "Expr"


@dataclass(frozen=True)
class App:
    fn: "Expr"
    arg: "Expr"


@dataclass(frozen=True)
class Seq:
    first: "Expr"
    second: "Expr"


@dataclass(frozen=True)
class Deref:
    ref: "Expr"


@dataclass(frozen=True)
class Assign:
    target: "Expr"
    value: "Expr"


@dataclass(frozen=True)
class RefCreate:
    level: Level
    ty: Type
    init: "Expr"


@dataclass(frozen=True)
class Cond:
    guard: "Expr"
    then: "Expr"
    else_: "Expr"


@dataclass(frozen=True)
class Flow:
    policy: Policy
    body: "Expr"


@dataclass(frozen=True)
class Allowed:
    policy: Policy
    then: "Expr"
    else_: "Expr"


@dataclass(frozen=True)
class Thread:
    level: Level
    body: "Expr"
    domain: str
    annot: Optional[Policy] = None


Expr = Union[
    Unit, BoolLit, Var, RefName, Abs, Fix, App, Seq, Deref, Assign,
    RefCreate, Cond, Flow, Allowed, Thread,
]

def _cached_hash(self) -> int:
    # Terms are hashed constantly by the property checkers; cache per node.
    h = self.__dict__.get("_hash")
    if h is None:
        h = hash((type(self).__name__,) + tuple(getattr(self, f.name) for f in fields(self)))
        object.__setattr__(self, "_hash", h)
    return h


def _state_without_hash(self) -> dict:
    return {k: v for k, v in self.__dict__.items() if k != "_hash"}


for _cls in (TUnit, TBool, TRef, TArrow, Latent, Unit, BoolLit, Var, RefName, Abs, Fix, App,
             Seq, Deref, Assign, RefCreate, Cond, Flow, Allowed, Thread):
    _cls.__hash__ = _cached_hash
    _cls.__getstate__ = _state_without_hash


UNIT = Unit()
TRUE = BoolLit(True)
FALSE = BoolLit(False)

_VALUE_TYPES = (Unit, BoolLit, Var, RefName, Abs)


def is_value(m: Expr) -> bool:
    return isinstance(m, _VALUE_TYPES)


def is_pseudo_value(m: Expr) -> bool:
    while isinstance(m, Fix):
        m = m.body
    return is_value(m)


def children(m: Expr) -> Tuple[Expr, ...]:
    if isinstance(m, (Abs, Fix, Flow)):
        return (m.body,)
    if isinstance(m, Thread):
        return (m.body,)
    if isinstance(m, (App,)):
        return (m.fn, m.arg)
    if isinstance(m, Seq):
        return (m.first, m.second)
    if isinstance(m, Deref):
        return (m.ref,)
    if isinstance(m, Assign):
        return (m.target, m.value)
    if isinstance(m, RefCreate):
        return (m.init,)
    if isinstance(m, (Cond,)):
        return (m.guard, m.then, m.else_)
    if isinstance(m, Allowed):
        return (m.then, m.else_)
    return ()


def subterms(m: Expr) -> Iterator[Expr]:
    stack = [m]
    while stack:
        t = stack.pop()
        yield t
        stack.extend(children(t))


def free_vars(m: Expr) -> frozenset:
    if isinstance(m, Var):
        return frozenset((m.name,))
    if isinstance(m, Abs):
        return free_vars(m.body) - {m.param}
    if isinstance(m, Fix):
        return free_vars(m.body) - {m.name}
    out: frozenset = frozenset()
    for c in children(m):
        out |= free_vars(c)
    return out


def ref_names(m: Expr) -> frozenset:
    return frozenset(t.name for t in subterms(m) if isinstance(t, RefName))


def domain_names(m: Expr) -> frozenset:
    return frozenset(t.domain for t in subterms(m) if isinstance(t, Thread))


def is_closed(m: Expr) -> bool:
    return not free_vars(m)


def _fresh_var(base: str, avoid: frozenset) -> str:
    i = 1
    while f"{base}{i}" in avoid:
        i += 1
    return f"{base}{i}"


def substitute(m: Expr, x: str, v: Expr) -> Expr:
    """Capture-avoiding ``m[v/x]``."""
    fv = free_vars(v)
    return _subst(m, x, v, fv)


def _subst(m: Expr, x: str, v: Expr, fv: frozenset) -> Expr:
    if isinstance(m, Var):
        return v if m.name == x else m
    if isinstance(m, (Unit, BoolLit, RefName)):
        return m
    if isinstance(m, (Abs, Fix)):
        binder = m.param if isinstance(m, Abs) else m.name
        if binder == x:
            return m
        body = m.body
        if binder in fv:
            new = _fresh_var(binder, fv | free_vars(body) | {x})
            body = _subst(body, binder, Var(new), frozenset((new,)))
            binder = new
        body = _subst(body, x, v, fv)
        if isinstance(m, Abs):
            return replace(m, param=binder, body=body)
        return replace(m, name=binder, body=body)
    if isinstance(m, App):
        return App(_subst(m.fn, x, v, fv), _subst(m.arg, x, v, fv))
    if isinstance(m, Seq):
        return Seq(_subst(m.first, x, v, fv), _subst(m.second, x, v, fv))
    if isinstance(m, Deref):
        return Deref(_subst(m.ref, x, v, fv))
    if isinstance(m, Assign):
        return Assign(_subst(m.target, x, v, fv), _subst(m.value, x, v, fv))
    if isinstance(m, RefCreate):
        return replace(m, init=_subst(m.init, x, v, fv))
    if isinstance(m, Cond):
        return Cond(*(_subst(c, x, v, fv) for c in (m.guard, m.then, m.else_)))
    if isinstance(m, Flow):
        return replace(m, body=_subst(m.body, x, v, fv))
    if isinstance(m, Allowed):
        return replace(m, then=_subst(m.then, x, v, fv), else_=_subst(m.else_, x, v, fv))
    if isinstance(m, Thread):
        return replace(m, body=_subst(m.body, x, v, fv))
    raise TypeError(f"not an expression: {m!r}")


def erase_annotations(m: Expr) -> Expr:
    """Drop every ``with F`` annotation on thread creation."""
    if isinstance(m, Thread):
        return Thread(m.level, erase_annotations(m.body), m.domain, None)
    return map_children(m, erase_annotations)


def map_children(m: Expr, f) -> Expr:
    if isinstance(m, (Unit, BoolLit, Var, RefName)):
        return m
    if isinstance(m, (Abs, Fix, Flow, Thread)):
        return replace(m, body=f(m.body))
    if isinstance(m, App):
        return App(f(m.fn), f(m.arg))
    if isinstance(m, Seq):
        return Seq(f(m.first), f(m.second))
    if isinstance(m, Deref):
        return Deref(f(m.ref))
    if isinstance(m, Assign):
        return Assign(f(m.target), f(m.value))
    if isinstance(m, RefCreate):
        return replace(m, init=f(m.init))
    if isinstance(m, Cond):
        return Cond(f(m.guard), f(m.then), f(m.else_))
    if isinstance(m, Allowed):
        return replace(m, then=f(m.then), else_=f(m.else_))
    raise TypeError(f"not an expression: {m!r}")


def resolve_refs(m: Expr, refs: Iterable[str]) -> Expr:
    """Turn free identifiers naming declared references into ``RefName``."""
    names = frozenset(refs)

    def go(t: Expr, bound: frozenset) -> Expr:
        if isinstance(t, Var):
            return RefName(t.name) if t.name in names and t.name not in bound else t
        if isinstance(t, Abs):
            return replace(t, body=go(t.body, bound | {t.param}))
        if isinstance(t, Fix):
            return replace(t, body=go(t.body, bound | {t.name}))
        return map_children(t, lambda c: go(c, bound))

    return go(m, frozenset()) if names else m


# ---------------------------------------------------------------------------
# Evaluation contexts


@dataclass(frozen=True)
class AppL:
    arg: Expr


@dataclass(frozen=True)
class AppR:
    fn: Expr


@dataclass(frozen=True)
class SeqL:
    second: Expr


@dataclass(frozen=True)
class RefArg:
    level: Level
    ty: Type


@dataclass(frozen=True)
class DerefArg:
    pass


@dataclass(frozen=True)
class AssignL:
    value: Expr


@dataclass(frozen=True)
class AssignR:
    target: Expr


@dataclass(frozen=True)
class CondGuard:
    then: Expr
    else_: Expr


@dataclass(frozen=True)
class FlowBody:
    policy: Policy


Frame = Union[AppL, AppR, SeqL, RefArg, DerefArg, AssignL, AssignR, CondGuard, FlowBody]
Context = Tuple[Frame, ...]


def _redex_shaped(m: Expr) -> bool:
    if isinstance(m, (Fix, Allowed, Thread, Seq)):
        return True
    if isinstance(m, App):
        return isinstance(m.fn, Abs)
    if isinstance(m, Cond):
        return isinstance(m.guard, BoolLit)
    if isinstance(m, (Flow, RefCreate)):
        return True
    if isinstance(m, Deref):
        return isinstance(m.ref, RefName)
    if isinstance(m, Assign):
        return isinstance(m.target, RefName)
    return False


def decompose(m: Expr) -> Optional[Tuple[Context, Expr]]:
    """Split ``m`` into an evaluation context and a redex.

    Returns ``None`` when ``m`` is a value or its next subterm to evaluate
    cannot reduce (a stuck term such as ``true ()``).
    """
    frames: list = []
    while True:
        if is_value(m):
            return None
        if isinstance(m, App):
            if not is_value(m.fn):
                frames.append(AppL(m.arg))
                m = m.fn
                continue
            if not is_value(m.arg):
                frames.append(AppR(m.fn))
                m = m.arg
                continue
        elif isinstance(m, Seq):
            if not is_value(m.first):
                frames.append(SeqL(m.second))
                m = m.first
                continue
        elif isinstance(m, RefCreate):
            if not is_value(m.init):
                frames.append(RefArg(m.level, m.ty))
                m = m.init
                continue
        elif isinstance(m, Deref):
            if not is_value(m.ref):
                frames.append(DerefArg())
                m = m.ref
                continue
        elif isinstance(m, Assign):
            if not is_value(m.target):
                frames.append(AssignL(m.value))
                m = m.target
                continue
            if not is_value(m.value):
                frames.append(AssignR(m.target))
                m = m.value
                continue
        elif isinstance(m, Cond):
            if not is_value(m.guard):
                frames.append(CondGuard(m.then, m.else_))
                m = m.guard
                continue
        elif isinstance(m, Flow):
            if not is_value(m.body):
                frames.append(FlowBody(m.policy))
                m = m.body
                continue
        if not _redex_shaped(m):
            return None
        return tuple(frames), m


def plug(ctx: Sequence[Frame], m: Expr) -> Expr:
    for fr in reversed(ctx):
        if isinstance(fr, AppL):
            m = App(m, fr.arg)
        elif isinstance(fr, AppR):
            m = App(fr.fn, m)
        elif isinstance(fr, SeqL):
            m = Seq(m, fr.second)
        elif isinstance(fr, RefArg):
            m = RefCreate(fr.level, fr.ty, m)
        elif isinstance(fr, DerefArg):
            m = Deref(m)
        elif isinstance(fr, AssignL):
            m = Assign(m, fr.value)
        elif isinstance(fr, AssignR):
            m = Assign(fr.target, m)
        elif isinstance(fr, CondGuard):
            m = Cond(m, fr.then, fr.else_)
        elif isinstance(fr, FlowBody):
            m = Flow(fr.policy, m)
        else:
            raise TypeError(f"not a frame: {fr!r}")
    return m


def context_policy(ctx: Sequence[Frame]) -> Policy:
    """Union of the flow declarations enclosing the hole."""
    out: Policy = frozenset()
    for fr in ctx:
        if isinstance(fr, FlowBody):
            out = out | fr.policy
    return out


# ---------------------------------------------------------------------------
# Lexer

KEYWORDS = frozenset({
    "true", "false", "fix", "if", "then", "else", "flow", "in", "allowed",
    "thread", "at", "with", "ref", "unit", "bool", "bot", "top",
})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*(?:\#[0-9]+)?)
  | (?P<op>-\[|\]->|->|:=|[(){}\[\]<>,;.:!\\=])
    """,
    re.VERBOSE,
)


class ParseError(Exception):
    """Malformed source text, with a 1-based position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "kw", "op" or "eof"
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        mt = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if mt is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = mt.lastgroup
        lexeme = mt.group()
        if kind == "nl":
            line += 1
            line_start = mt.end()
        elif kind == "ident":
            toks.append(Token("kw" if lexeme in KEYWORDS else "ident", lexeme, line, col))
        elif kind == "op":
            toks.append(Token("op", lexeme, line, col))
        pos = mt.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


# ---------------------------------------------------------------------------
# Parser

class _Parser:
    def __init__(self, text: str, universe: Optional[Iterable[str]]):
        self.toks = tokenize(text)
        self.i = 0
        self.universe = None if universe is None else frozenset(universe)

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("op", "kw") and t.text == text

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.advance()

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "ident":
            self.fail(f"expected {what}")
        return self.advance().text

    def fail(self, msg: str):
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        raise ParseError(f"{msg}, found {found}", t.line, t.col)

    def eof(self) -> None:
        if self.tok.kind != "eof":
            self.fail("expected end of input")

    # security values
    def level(self) -> Level:
        if self.at("bot"):
            self.advance()
            return self._universe("bot")
        if self.at("top"):
            self.advance()
            return frozenset()
        self.expect("{")
        out = []
        if not self.at("}"):
            out.append(self.ident("principal"))
            while self.at(","):
                self.advance()
                out.append(self.ident("principal"))
        self.expect("}")
        return frozenset(out)

    def policy(self) -> Policy:
        if self.at("bot"):
            self.advance()
            uni = self._universe("bot")
            return frozenset((p, q) for p in uni for q in uni)
        if self.at("top"):
            self.advance()
            return frozenset()
        self.expect("{")
        out = []
        if not self.at("}"):
            out.append(self._pair())
            while self.at(","):
                self.advance()
                out.append(self._pair())
        self.expect("}")
        return frozenset(out)

    def _pair(self):
        p = self.ident("principal")
        self.expect("<")
        return (p, self.ident("principal"))

    def _universe(self, kw: str) -> frozenset:
        if self.universe is None:
            t = self.toks[self.i - 1]
            raise ParseError(f"{kw!r} needs a declared universe", t.line, t.col)
        return self.universe

    # types
    def type_(self) -> Type:
        base = self._type_base()
        if self.at("->"):
            self.advance()
            return TArrow(base, self.type_(), Latent())
        if self.at("-["):
            self.advance()
            lat = self._latent_fields("]->")
            return TArrow(base, self.type_(), lat)
        return base

    def _type_base(self) -> Type:
        if self.at("unit"):
            self.advance()
            return UNIT_T
        if self.at("bool"):
            self.advance()
            return BOOL_T
        if self.at("ref"):
            self.advance()
            self.expect("<")
            lvl = None
            if self.at("{") or self.at("bot") or self.at("top"):
                lvl = self.level()
                self.expect(",")
            inner = self.type_()
            self.expect(">")
            return TRef(inner, lvl)
        if self.at("("):
            self.advance()
            t = self.type_()
            self.expect(")")
            return t
        self.fail("expected a type")

    def _latent_fields(self, close: str) -> Latent:
        vals: dict = {}
        while not self.at(close):
            t = self.tok
            name = self.ident("latent field name")
            if name not in LATENT_FIELDS:
                raise ParseError(f"unknown latent field {name!r}", t.line, t.col)
            if name in vals:
                raise ParseError(f"duplicate latent field {name!r}", t.line, t.col)
            self.expect("=")
            if name == "j":
                vals[name] = self.level()
            elif name == "eff":
                self.expect("(")
                r = self.level()
                self.expect(",")
                w = self.level()
                self.expect(",")
                tt = self.level()
                self.expect(")")
                vals[name] = (r, w, tt)
            else:
                vals[name] = self.policy()
            if not self.at(close):
                self.expect(";")
        self.advance()
        return Latent(**vals)

    # expressions
    def expr(self) -> Expr:
        if self.at("\\"):
            self.advance()
            x = self.ident("parameter name")
            self.expect(":")
            ty = self.type_()
            lat = None
            if self.at("["):
                self.advance()
                lat = self._latent_fields("]")
            self.expect(".")
            return Abs(x, ty, self.expr(), lat)
        if self.at("fix"):
            self.advance()
            x = self.ident("recursive name")
            self.expect(":")
            ty = self.type_()
            self.expect(".")
            return Fix(x, ty, self.expr())
        if self.at("if"):
            self.advance()
            g = self.expr()
            self.expect("then")
            t = self.expr()
            self.expect("else")
            return Cond(g, t, self.expr())
        if self.at("flow"):
            self.advance()
            pol = self.policy()
            self.expect("in")
            return Flow(pol, self.expr())
        if self.at("allowed"):
            self.advance()
            pol = self.policy()
            self.expect("then")
            t = self.expr()
            self.expect("else")
            return Allowed(pol, t, self.expr())
        first = self.assign()
        if self.at(";"):
            self.advance()
            return Seq(first, self.expr())
        return first

    def assign(self) -> Expr:
        lhs = self.app()
        if self.at(":="):
            self.advance()
            return Assign(lhs, self.assign())
        return lhs

    def _starts_operand(self) -> bool:
        t = self.tok
        if t.kind == "ident":
            return True
        if t.kind == "kw":
            return t.text in ("true", "false", "thread", "ref")
        return t.kind == "op" and t.text in ("(", "!")

    def app(self) -> Expr:
        if not self._starts_operand():
            self.fail("expected an expression")
        m = self.prefix()
        while self._starts_operand():
            m = App(m, self.prefix())
        return m

    def prefix(self) -> Expr:
        if self.at("!"):
            self.advance()
            return Deref(self.prefix())
        if self.at("ref"):
            self.advance()
            self.expect("<")
            lvl = self.level()
            self.expect(",")
            ty = self.type_()
            self.expect(">")
            return RefCreate(lvl, ty, self.prefix())
        return self.atom()

    def atom(self) -> Expr:
        t = self.tok
        if self.at("(") and self.toks[self.i + 1].text == ")":
            self.i += 2
            return UNIT
        if self.at("true"):
            self.advance()
            return TRUE
        if self.at("false"):
            self.advance()
            return FALSE
        if t.kind == "ident":
            self.advance()
            return Var(t.text)
        if self.at("thread"):
            self.advance()
            self.expect("<")
            lvl = self.level()
            self.expect(">")
            body = self.expr()
            self.expect("at")
            dom = self.ident("domain name")
            annot = None
            if self.at("with"):
                self.advance()
                annot = self.policy()
            return Thread(lvl, body, dom, annot)
        if self.at("("):
            self.advance()
            m = self.expr()
            self.expect(")")
            return m
        self.fail("expected an expression")


def parse_program(
    text: str,
    universe: Optional[Iterable[str]] = None,
    refs: Iterable[str] = (),
) -> Expr:
    """Parse a closed or open expression.

    ``universe`` is needed only for the ``bot`` keyword.  Free identifiers
    listed in ``refs`` become reference names.
    """
    p = _Parser(text, universe)
    m = p.expr()
    p.eof()
    return resolve_refs(m, refs)


def parse_type(text: str, universe: Optional[Iterable[str]] = None) -> Type:
    p = _Parser(text, universe)
    t = p.type_()
    p.eof()
    return t


def parse_level(text: str, universe: Optional[Iterable[str]] = None) -> Level:
    p = _Parser(text, universe)
    lvl = p.level()
    p.eof()
    return lvl


def parse_policy(text: str, universe: Optional[Iterable[str]] = None) -> Policy:
    p = _Parser(text, universe)
    pol = p.policy()
    p.eof()
    return pol


# ---------------------------------------------------------------------------
# Printer

_EXPR, _ASSIGN, _APP, _OPERAND = range(4)


def pretty_type(t: Type) -> str:
    if isinstance(t, TUnit):
        return "unit"
    if isinstance(t, TBool):
        return "bool"
    if isinstance(t, TRef):
        inner = pretty_type(t.inner)
        if t.level is None:
            return f"ref<{inner}>"
        return f"ref<{format_level(t.level)}, {inner}>"
    if isinstance(t, TArrow):
        left = pretty_type(t.param)
        if isinstance(t.param, TArrow):
            left = f"({left})"
        if t.latent.is_empty():
            return f"{left} -> {pretty_type(t.result)}"
        return f"{left} -[{pretty_latent(t.latent)}]-> {pretty_type(t.result)}"
    raise TypeError(f"not a type: {t!r}")


def pretty_latent(lat: Latent) -> str:
    parts = []
    if lat.j is not None:
        parts.append(f"j={format_level(lat.j)}")
    if lat.F is not None:
        parts.append(f"F={format_policy(lat.F)}")
    if lat.eff is not None:
        parts.append("eff=(" + ", ".join(format_level(x) for x in lat.eff) + ")")
    if lat.A is not None:
        parts.append(f"A={format_policy(lat.A)}")
    if lat.s is not None:
        parts.append(f"s={format_policy(lat.s)}")
    return "; ".join(parts)


def pretty(m: Expr) -> str:
    """Render ``m`` so that parsing the text gives ``m`` back."""
    return _pp(m, _EXPR)


def _paren(text: str, needed: bool) -> str:
    return f"({text})" if needed else text


def _pp(m: Expr, prec: int) -> str:
    if isinstance(m, Unit):
        return "()"
    if isinstance(m, BoolLit):
        return "true" if m.value else "false"
    if isinstance(m, (Var, RefName)):
        return m.name
    if isinstance(m, Thread):
        out = f"thread<{format_level(m.level)}> {_pp(m.body, _EXPR)} at {m.domain}"
        if m.annot is not None:
            out += f" with {format_policy(m.annot)}"
        return out
    if isinstance(m, Abs):
        lat = "" if m.latent is None else f" [{pretty_latent(m.latent)}]"
        text = f"\\{m.param}:{pretty_type(m.param_type)}{lat}. {_pp(m.body, _EXPR)}"
        return _paren(text, prec > _EXPR)
    if isinstance(m, Fix):
        text = f"fix {m.name}:{pretty_type(m.self_type)}. {_pp(m.body, _EXPR)}"
        return _paren(text, prec > _EXPR)
    if isinstance(m, Cond):
        text = f"if {_pp(m.guard, _EXPR)} then {_pp(m.then, _EXPR)} else {_pp(m.else_, _EXPR)}"
        return _paren(text, prec > _EXPR)
    if isinstance(m, Flow):
        text = f"flow {format_policy(m.policy)} in {_pp(m.body, _EXPR)}"
        return _paren(text, prec > _EXPR)
    if isinstance(m, Allowed):
        text = (f"allowed {format_policy(m.policy)} then {_pp(m.then, _EXPR)}"
                f" else {_pp(m.else_, _EXPR)}")
        return _paren(text, prec > _EXPR)
    if isinstance(m, Seq):
        return _paren(f"{_pp(m.first, _ASSIGN)}; {_pp(m.second, _EXPR)}", prec > _EXPR)
    if isinstance(m, Assign):
        return _paren(f"{_pp(m.target, _APP)} := {_pp(m.value, _ASSIGN)}", prec > _ASSIGN)
    if isinstance(m, App):
        return _paren(f"{_pp(m.fn, _APP)} {_pp(m.arg, _OPERAND)}", prec > _APP)
    if isinstance(m, Deref):
        return "!" + _pp(m.ref, _OPERAND)
    if isinstance(m, RefCreate):
        return (f"ref<{format_level(m.level)}, {pretty_type(m.ty)}> "
                f"{_pp(m.init, _OPERAND)}")
    raise TypeError(f"not an expression: {m!r}")
