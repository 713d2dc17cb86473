"""Evaluate the cases of ``data/golden.json`` into comparable outcome records."""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from secmig import confinement, decl_effect, typecheck_dnd
from secmig.errors import TypeCheckError
from secmig.lattice import format_policy
from secmig.property_check import (
    ObsParams, check_dnd, check_dni, check_fpc, check_ndn, check_simulation, replay,
)
from secmig.semantics import network_from_dict, run
from secmig.syntax import pretty, pretty_type

GOLDEN = Path(__file__).parent / "data" / "golden.json"
PARAMS = ObsParams(depth=12)
CHECKS = {"dnd": check_dnd, "ndn": check_ndn, "fpc": check_fpc, "dni": check_dni}


def load_cases() -> list:
    data = json.loads(GOLDEN.read_text())
    return [dict(case, network=dict(data["base"], threads=case["threads"]))
            for case in data["cases"]]


def _rule(fn) -> str:
    try:
        fn()
    except TypeCheckError as exc:
        return exc.rule
    return "ok"


def annotated_config(net, cfg):
    pool = {m: decl_effect.annotate(net.lattice, net.sigma, net.gamma, p)[0]
            for m, p in cfg.pool.items()}
    store = decl_effect.annotate_store(net.lattice, net.sigma, net.gamma, cfg.store)
    return dataclasses.replace(cfg, pool=pool, store=store)


def outcome(case: dict, key: str):
    """The observed value for one ``expect`` key of ``case``."""
    ln = network_from_dict(case["network"])
    net, cfg = ln.net, ln.config
    m = ln.thread_order[0]
    prog, domain, lvl = cfg.pool[m], cfg.tracker[m], net.upsilon[m]
    lat = net.lattice
    if key == "dnd_type":
        return _rule(lambda: typecheck_dnd.check(lat, net.sigma, net.gamma, lvl, frozenset(), prog))
    if key == "static":
        return _rule(lambda: confinement.check_static(
            lat, net.sigma, net.gamma, net.policies, net.policy_of(domain), prog))
    if key == "relaxed":
        return _rule(lambda: confinement.check_relaxed(
            lat, net.sigma, net.gamma, net.policy_of(domain), prog))
    if key in ("effect", "annotated", "type"):
        out, eff, ty = decl_effect.annotate(lat, net.sigma, net.gamma, prog)
        return {"effect": format_policy(eff), "annotated": pretty(out), "type": pretty_type(ty)}[key]
    if key.split("_")[0] in ("run", "labels", "store"):
        kind, mode = key.split("_")
        start = annotated_config(net, cfg) if mode == "annotated" else cfg
        trace = run(net, start, mode)
        if kind == "run":
            return trace.status
        if kind == "labels":
            return [lab.kind.value for lab in trace.labels]
        return {a: pretty(v) for a, v in trace.final.store.items() if a in case["expect"][key]}
    params = PARAMS
    if case.get("pin_trackers"):
        params = dataclasses.replace(PARAMS, trackers=(cfg.tracker,))
    if key in CHECKS:
        verdict = CHECKS[key](net, cfg, params)
        if not verdict.ok:
            assert replay(net, verdict), f"{case['name']}: {key} witness does not replay"
        return "ok" if verdict.ok else "violation"
    if key in ("simulation", "simulation_reverse"):
        verdict = check_simulation(net, cfg, annotated_config(net, cfg), params,
                                   reverse=key == "simulation_reverse")
        if not verdict.ok:
            assert replay(net, verdict)
        return "ok" if verdict.ok else "violation"
    raise KeyError(key)
