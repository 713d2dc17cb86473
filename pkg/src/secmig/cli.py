"""Command-line front end.

JSON goes to stdout and diagnostics to stderr.  Exit codes:

====  ==========================================================
0     success (well typed, normal termination, no violation)
1     type error
2     usage error (bad arguments, unparsable input, missing policy)
3     run halted on a refused migration
4     run halted on a stuck thread
5     property violation found
====  ==========================================================
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import confinement, decl_effect, typecheck_dnd
from .errors import TypeCheckError
from .lattice import format_level, format_policy
from .property_check import (
    DEFAULT_DEPTH, ObsParams, StoreSpec, check_dnd, check_dni, check_fpc, check_ndn,
    check_simulation, check_theorem_combination,
)
from .semantics import LoadedNetwork, load_network, run
from .syntax import (
    ParseError, Type, parse_level, parse_policy, parse_program, pretty,
    pretty_type,
)

EXIT_OK, EXIT_TYPE, EXIT_USAGE, EXIT_BLOCKED, EXIT_STUCK, EXIT_VIOLATION = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def ast_to_json(node) -> object:
    """Tagged-dictionary rendering of expressions and types."""
    if dataclasses.is_dataclass(node):
        out = {"node": type(node).__name__}
        for f in dataclasses.fields(node):
            out[f.name] = ast_to_json(getattr(node, f.name))
        return out
    if isinstance(node, frozenset):
        items = sorted(node)
        if items and isinstance(items[0], tuple):
            return [f"{p}<{q}" for p, q in items]
        return items
    if isinstance(node, tuple):
        return [ast_to_json(x) for x in node]
    return node


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=False))


def _read_source(arg: str) -> str:
    if arg == "-":
        return sys.stdin.read()
    path = Path(arg)
    if path.is_file():
        return path.read_text()
    return arg


def _load(args) -> LoadedNetwork:
    if not args.network:
        raise UsageError("--network is required")
    try:
        return load_network(args.network)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load network {args.network}: {exc}") from exc


def _programs(args, ln: LoadedNetwork) -> List[tuple]:
    """(name, program, level, domain) for the program under test."""
    uni = ln.net.lattice.universe
    refs = list(ln.net.sigma)
    if getattr(args, "program", None):
        prog = parse_program(_read_source(args.program), uni, refs)
        level = parse_level(args.thread_level, uni) if args.thread_level else uni
        domain = args.domain or (ln.net.domains[0] if ln.net.domains else None)
        return [("program", prog, level, domain)]
    cfg = ln.config
    return [(m, cfg.pool[m], ln.net.upsilon[m], cfg.tracker[m]) for m in ln.thread_order]


def cmd_parse(args) -> int:
    uni = None
    refs: list = []
    if args.network:
        ln = _load(args)
        uni = ln.net.lattice.universe
        refs = list(ln.net.sigma)
    m = parse_program(_read_source(args.source), uni, refs)
    _emit({"pretty": pretty(m), "ast": ast_to_json(m)})
    return EXIT_OK


def _type_json(ty: Type) -> str:
    return pretty_type(ty)


def cmd_typecheck(args) -> int:
    ln = _load(args)
    net = ln.net
    uni = net.lattice.universe
    results = []
    failed = False
    for name, prog, level, domain in _programs(args, ln):
        entry: dict = {"thread": name}
        try:
            if args.system == "dnd":
                F = parse_policy(args.policy, uni) if args.policy else frozenset()
                eff, ty = typecheck_dnd.check(net.lattice, net.sigma, net.gamma, level, F, prog)
                entry.update(type=_type_json(ty),
                             effect=[format_level(x) for x in eff])
            else:
                if args.allowed is not None:
                    A = parse_policy(args.allowed, uni)
                elif domain in net.policies:
                    A = net.policy_of(domain)
                elif domain is not None:
                    raise UsageError(f"no policy declared for domain {domain}; pass --allowed")
                else:
                    A = frozenset()
                if args.system == "confine-static":
                    ty = confinement.check_static(net.lattice, net.sigma, net.gamma,
                                                  net.policies, A, prog)
                else:
                    ty = confinement.check_relaxed(net.lattice, net.sigma, net.gamma, A, prog)
                entry.update(type=_type_json(ty), allowed=format_policy(A))
            entry["ok"] = True
        except TypeCheckError as exc:
            failed = True
            entry.update(ok=False, error=exc.to_json())
            print(f"{name}: {exc}", file=sys.stderr)
        except confinement.MissingDomainPolicy as exc:
            raise UsageError(f"no policy declared for domain {exc.args[0]}") from None
        results.append(entry)
    _emit({"system": args.system, "results": results})
    return EXIT_TYPE if failed else EXIT_OK


def cmd_annotate(args) -> int:
    ln = _load(args)
    net = ln.net
    results = []
    failed = False
    for name, prog, _, _ in _programs(args, ln):
        try:
            out, eff, ty = decl_effect.annotate(net.lattice, net.sigma, net.gamma, prog)
            results.append({"thread": name, "ok": True, "annotated": pretty(out),
                            "effect": format_policy(eff), "type": _type_json(ty)})
        except TypeCheckError as exc:
            failed = True
            results.append({"thread": name, "ok": False, "error": exc.to_json()})
            print(f"{name}: {exc}", file=sys.stderr)
    _emit({"results": results})
    return EXIT_TYPE if failed else EXIT_OK


def cmd_run(args) -> int:
    ln = _load(args)
    net, cfg = ln.net, ln.config
    if args.mode == "annotated":
        pool = {}
        for m, prog in cfg.pool.items():
            try:
                pool[m] = decl_effect.annotate(net.lattice, net.sigma, net.gamma, prog)[0]
            except TypeCheckError as exc:
                print(f"{m}: {exc}", file=sys.stderr)
                return EXIT_TYPE
        store = decl_effect.annotate_store(net.lattice, net.sigma, net.gamma, cfg.store)
        cfg = dataclasses.replace(cfg, pool=pool, store=store)
    trace = run(net, cfg, args.mode, args.scheduler, args.max_steps, args.seed)
    for label in trace.labels:
        print(json.dumps(label.to_json()))
    final = {
        "final": True,
        "status": trace.status,
        "tracker": dict(sorted(trace.final.tracker.items())),
        "pool": {m: pretty(p) for m, p in sorted(trace.final.pool.items())},
        "store": {a: pretty(v) for a, v in sorted(trace.final.store.items())},
    }
    if trace.diagnostic:
        final["diagnostic"] = trace.diagnostic
        print(trace.diagnostic, file=sys.stderr)
    print(json.dumps(final))
    return {"blocked": EXIT_BLOCKED, "stuck": EXIT_STUCK}.get(trace.status, EXIT_OK)


def _store_spec(items: List[str], ln: LoadedNetwork) -> StoreSpec:
    """Parse ``ref=v1,v2`` items into candidate values per cell."""
    uni = ln.net.lattice.universe
    values = {}
    for item in items:
        name, sep, raw = item.partition("=")
        if not sep or name not in ln.net.sigma:
            raise UsageError(f"--store expects ref=v1,v2 with a declared ref, got {item!r}")
        values[name] = tuple(parse_program(v, uni, list(ln.net.sigma)) for v in raw.split(","))
    return StoreSpec(values)


def cmd_verify(args) -> int:
    ln = _load(args)
    net, cfg = ln.net, ln.config
    levels = None
    if args.level:
        levels = (parse_level(args.level, net.lattice.universe),)
    params = ObsParams(depth=args.depth, levels=levels, jobs=args.jobs,
                       store_spec=_store_spec(args.store, ln))
    prop = args.property
    if prop == "combined":
        res = check_theorem_combination(net, cfg, params)
        _emit({"property": prop, **res.to_json()})
        return EXIT_OK if res.implication_holds else EXIT_VIOLATION
    if prop == "simulation":
        pool = {}
        for m, prog in cfg.pool.items():
            try:
                pool[m] = decl_effect.annotate(net.lattice, net.sigma, net.gamma, prog)[0]
            except TypeCheckError as exc:
                print(f"{m}: {exc}", file=sys.stderr)
                return EXIT_TYPE
        verdict = check_simulation(net, cfg, dataclasses.replace(cfg, pool=pool), params)
    else:
        fn = {"dnd": check_dnd, "ndn": check_ndn, "fpc": check_fpc, "dni": check_dni}[prop]
        verdict = fn(net, cfg, params)
    _emit({"property": prop, **verdict.to_json()})
    return EXIT_OK if verdict.ok else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", help="network description (JSON)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)

    prog_opts = argparse.ArgumentParser(add_help=False)
    prog_opts.add_argument("--program", help="program file or inline text; default: the network's threads")
    prog_opts.add_argument("--thread-level", help="level of the checked program (default: bottom)")
    prog_opts.add_argument("--domain", help="domain the program runs at")

    p = argparse.ArgumentParser(prog="secmig", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("parse", parents=[common], help="parse and pretty-print a program")
    sp.add_argument("source", help="program file, inline text, or - for stdin")
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("typecheck", parents=[common, prog_opts], help="run a type checker")
    sp.add_argument("--system", required=True, choices=["dnd", "confine-static", "confine-relaxed"])
    sp.add_argument("--policy", help="flow policy in scope (noninterference system)")
    sp.add_argument("--allowed", help="allowed policy (confinement systems; default: the domain's)")
    sp.set_defaults(func=cmd_typecheck)

    sp = sub.add_parser("annotate", parents=[common, prog_opts], help="compute declassification effects")
    sp.set_defaults(func=cmd_annotate)

    sp = sub.add_parser("run", parents=[common], help="execute the network")
    sp.add_argument("--mode", default="base", choices=["base", "runtimeCheck", "annotated"])
    sp.add_argument("--scheduler", default="roundRobin", choices=["roundRobin", "firstRunnable", "seeded"])
    sp.add_argument("--max-steps", type=int, default=1000)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", parents=[common], help="bounded check of a security property")
    sp.add_argument("--property", required=True,
                    choices=["dnd", "ndn", "fpc", "dni", "simulation", "combined"])
    sp.add_argument("--depth", type=int, default=DEFAULT_DEPTH)
    sp.add_argument("--level", help="single observer level (default: all levels)")
    sp.add_argument("--store", action="append", default=[], metavar="REF=V1,V2",
                    help="candidate initial values for a cell (repeatable)")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"syntax error at {exc.line}:{exc.col}: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
