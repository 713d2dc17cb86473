import json
import subprocess
import sys
from pathlib import Path

import pytest

from secmig.cli import main

DATA = Path(__file__).parent / "data"


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def net(name):
    return DATA / f"{name}.json"


def test_parse_pretty_prints(capsys):
    code, out, _ = cli(capsys, "parse", "flow {H<L} in ()")
    assert code == 0
    report = json.loads(out)
    assert report["pretty"] == "flow {H<L} in ()"
    assert report["ast"]["node"] == "Flow" and report["ast"]["policy"] == ["H<L"]


def test_parse_error_is_usage_error(capsys):
    code, out, err = cli(capsys, "parse", "if ()")
    assert code == 2 and out == "" and "syntax error at 1:" in err


def test_typecheck_unit_is_accepted(capsys):
    code, out, _ = cli(capsys, "typecheck", "--network", net("empty"), "--system", "dnd", "--program", "()")
    assert code == 0
    assert json.loads(out)["results"] == [
        {"thread": "program", "type": "unit", "effect": ["{H,L}", "{}", "{H,L}"], "ok": True}]


def test_typecheck_migration_leak_fails_at_cond(capsys):
    code, out, err = cli(capsys, "typecheck", "--network", net("migration_leak"), "--system", "dnd")
    assert code == 1
    (entry,) = json.loads(out)["results"]
    assert not entry["ok"] and entry["error"]["rule"] == "Cond"
    assert "m:" in err


def test_static_confinement_needs_every_domain_policy(capsys):
    code, out, err = cli(capsys, "typecheck", "--network", net("no_domains"), "--system", "confine-static")
    assert code == 2 and "no policy declared for domain d1" in err
    relaxed = ("typecheck", "--network", net("no_domains"), "--system", "confine-relaxed")
    assert cli(capsys, *relaxed)[0] == 2
    assert cli(capsys, *relaxed, "--allowed", "{}")[0] == 0


def test_confinement_reports_allowed_policy(capsys):
    code, out, _ = cli(capsys, "typecheck", "--network", net("declared_leak"), "--system", "confine-static")
    assert code == 1 and json.loads(out)["results"][0]["error"]["rule"] == "Flow"
    code, out, _ = cli(capsys, "typecheck", "--network", net("declared_leak"), "--system", "confine-relaxed")
    assert code == 0 and json.loads(out)["results"][0]["allowed"] == "{}"


def test_annotate(capsys):
    code, out, _ = cli(capsys, "annotate", "--network", net("empty"), "--program", "()")
    assert code == 0
    assert json.loads(out)["results"] == [
        {"thread": "program", "ok": True, "annotated": "()", "effect": "{}", "type": "unit"}]
    code, out, _ = cli(capsys, "annotate", "--network", net("declared_leak"))
    (entry,) = json.loads(out)["results"]
    assert code == 0 and entry["annotated"].endswith("with {H<H, H<L, L<H, L<L}")
    code, out, _ = cli(capsys, "annotate", "--network", net("empty"), "--program", "if true then () else false")
    assert code == 1 and json.loads(out)["results"][0]["error"]["rule"] == "Cond_I"


def run_lines(out):
    return [json.loads(line) for line in out.splitlines()]


def test_run_location_dependent_program(capsys):
    code, out, _ = cli(capsys, "run", "--network", net("location"))
    lines = run_lines(out)
    assert code == 0
    assert [x["kind"] for x in lines[:-1]] == ["allowedTrue", "assign"]
    assert lines[-1]["status"] == "terminated" and lines[-1]["store"] == {"a": "false", "b": "true"}


def test_run_annotated_blocks_on_refused_migration(capsys):
    code, out, err = cli(capsys, "run", "--network", net("declared_leak"), "--mode", "annotated")
    lines = run_lines(out)
    assert code == 3 and lines[-1]["status"] == "blocked" and err
    code, _, _ = cli(capsys, "run", "--network", net("declared_leak"))
    assert code == 0


def test_run_stuck_and_empty(capsys):
    code, out, _ = cli(capsys, "run", "--network", net("stuck"))
    assert code == 4 and run_lines(out)[-1]["status"] == "stuck"
    code, out, _ = cli(capsys, "run", "--network", net("empty"))
    (final,) = run_lines(out)
    assert code == 0 and final["pool"] == {}


@pytest.mark.parametrize("prop,code", [("dnd", 0), ("fpc", 5), ("dni", 0), ("combined", 0)])
def test_verify_declared_leak(capsys, prop, code):
    got, out, _ = cli(capsys, "verify", "--network", net("declared_leak"), "--property", prop)
    report = json.loads(out)
    assert got == code and report["property"] == prop


def test_verify_violation_report(capsys):
    code, out, _ = cli(capsys, "verify", "--network", net("migration_leak"), "--property", "dnd",
                       "--level", "{H,L}", "--depth", 6)
    report = json.loads(out)
    assert code == 5 and report["verdict"] == "Violation" and report["level"] == ["H", "L"]
    assert "witness" in report


def test_verify_store_restriction(capsys):
    args = ("verify", "--network", net("migration_leak"), "--property", "dnd", "--depth", 6)
    assert cli(capsys, *args, "--store", "a=false")[0] == 0
    assert cli(capsys, *args, "--store", "zz=false")[0] == 2


def test_verify_simulation(capsys):
    code, out, _ = cli(capsys, "verify", "--network", net("location"), "--property", "simulation")
    assert code == 0 and json.loads(out)["verdict"] == "NoViolationUpTo"


def test_usage_errors(capsys):
    assert cli(capsys, "typecheck", "--system", "dnd")[0] == 2
    assert cli(capsys, "typecheck", "--network", net("missing"), "--system", "dnd")[0] == 2
    assert cli(capsys, "verify", "--network", net("empty"), "--property", "bogus")[0] == 2
    assert cli(capsys)[0] == 2


def test_output_is_deterministic():
    argv = [sys.executable, "-m", "secmig.cli", "verify", "--network", str(net("migration_leak")),
            "--property", "combined", "--depth", "4"]
    first = subprocess.run(argv, capture_output=True, check=False)
    second = subprocess.run(argv, capture_output=True, check=False)
    assert first.returncode == second.returncode
    assert first.stdout == second.stdout and first.stdout
