"""Command line interface tests, run in process through main()."""

from __future__ import annotations

import json

import pytest

from covenant.cli import EXIT_INTEGRITY, EXIT_OK, EXIT_USAGE, EXIT_VIOLATIONS, main

GOOD_SPEC = """\
community Clinic {
  role Officer: human;
  policy burden(screen, Officer);
  contract Rules {
    allow Officer: discharge;
  }
}
"""

BAD_SPEC = "community Clinic {\n  role Officer human;\n}\n"

DANGLING_SPEC = """\
community Clinic {
  role Officer: human;
  policy burden(screen, Nobody);
}
"""


def run_happy(tmp_path):
    code = main(["run", "--scenario", "happy_path", "--out", str(tmp_path)])
    assert code == EXIT_OK
    return sorted(p.name for p in tmp_path.glob("*.audit"))


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("happy_path", "rogue_ai", "negotiation", "advisory_gate"):
        assert name in out


def test_scenarios_run_and_coverage(capsys):
    assert main(["scenarios", "--run", "--coverage"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 4
    assert "missing: none" in out


def test_run_writes_audit_exports(tmp_path, capsys):
    files = run_happy(tmp_path)
    assert files == [
        "happy_path.0.DataAccessCommunity.audit",
        "happy_path.1.MatchingWorkflowCommunity.audit",
    ]
    out = capsys.readouterr().out
    assert "[PASS]" in out and "0 violations" in out


def test_run_with_injected_fault_exits_nonzero(tmp_path, capsys):
    code = main(
        ["run", "--scenario", "rogue_ai", "--inject", "prohibition", "--out", str(tmp_path)]
    )
    assert code == EXIT_VIOLATIONS
    out = capsys.readouterr().out
    assert "violation embargo_holds" in out
    assert "(revoke_final_embargo)" in out


def test_run_requires_a_source(capsys):
    assert main(["run", "--out", "."]) == EXIT_USAGE
    assert "needs either" in capsys.readouterr().err


def test_run_unknown_scenario(capsys):
    assert main(["run", "--scenario", "nonesuch"]) == EXIT_USAGE
    assert "nonesuch" in capsys.readouterr().err


def test_run_rejects_unknown_injection(capsys):
    assert main(["run", "--scenario", "rogue_ai", "--inject", "safety"]) == EXIT_USAGE
    assert "safety" in capsys.readouterr().err


def test_ad_hoc_script_run(tmp_path, capsys):
    spec = tmp_path / "gate.community"
    spec.write_text(GOOD_SPEC, encoding="utf-8")
    script = tmp_path / "session.events"
    script.write_text(
        "bind Officer officer_1 human Clinic\n"
        "declare: speech_act officer_1 declare_burden action=screen holder=Officer\n"
        "done: speech_act officer_1 discharge select=burden:screen:HELD\n",
        encoding="utf-8",
    )
    code = main(
        ["run", "--spec", str(spec), "--script", str(script), "--owner", "Clinic",
         "--out", str(tmp_path)]
    )
    assert code == EXIT_OK
    assert (tmp_path / "session.0.Clinic.audit").exists()
    assert "[PASS]" in capsys.readouterr().out


def test_verify_clean_trace(tmp_path, capsys):
    run_happy(tmp_path)
    capsys.readouterr()
    trace = tmp_path / "happy_path.0.DataAccessCommunity.audit"
    code = main(
        ["verify", "--trace", str(trace), "--property", "safety",
         "--action", "read_demographics", "--burden", "verify_consent"]
    )
    assert code == EXIT_OK
    captured = capsys.readouterr()
    assert captured.out.strip() == ""
    assert "0 violation(s)" in captured.err


def test_verify_flags_violations_and_writes_report(tmp_path, capsys):
    main(["run", "--scenario", "happy_path", "--inject", "safety", "--out", str(tmp_path)])
    capsys.readouterr()
    trace = tmp_path / "happy_path__safety.0.DataAccessCommunity.audit"
    report = tmp_path / "violations.jsonl"
    code = main(
        ["verify", "--trace", str(trace), "--property", "safety",
         "--action", "read_demographics", "--burden", "verify_consent",
         "--report", str(report)]
    )
    assert code == EXIT_VIOLATIONS
    lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert len(lines) == 1 and lines[0]["property"] == "consent_gated_access"
    assert report.read_text() == "\n".join(
        json.dumps(entry, separators=(",", ":")) for entry in lines
    ) + "\n"


def test_verify_needs_property_parameters(tmp_path, capsys):
    run_happy(tmp_path)
    trace = tmp_path / "happy_path.0.DataAccessCommunity.audit"
    code = main(["verify", "--trace", str(trace), "--property", "safety"])
    assert code == EXIT_USAGE
    assert "--burden" in capsys.readouterr().err


def test_verify_accountability_needs_no_parameters(tmp_path, capsys):
    run_happy(tmp_path)
    trace = tmp_path / "happy_path.1.MatchingWorkflowCommunity.audit"
    assert main(["verify", "--trace", str(trace), "--property", "accountability"]) == EXIT_OK


def test_audit_reports_head_digest(tmp_path, capsys):
    run_happy(tmp_path)
    capsys.readouterr()
    trace = tmp_path / "happy_path.0.DataAccessCommunity.audit"
    assert main(["audit", "--trace", str(trace)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("ok: ") and "head seq" in out


def test_audit_detects_tampering(tmp_path, capsys):
    run_happy(tmp_path)
    trace = tmp_path / "happy_path.0.DataAccessCommunity.audit"
    lines = trace.read_text(encoding="utf-8").splitlines()
    lines[5] = lines[5].replace('"event"', '"Event"', 1)
    trace.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert main(["audit", "--trace", str(trace)]) == EXIT_INTEGRITY
    err = capsys.readouterr().err
    assert "integrity failure at seq 4" in err


def test_parse_prints_canonical_form(tmp_path, capsys):
    spec = tmp_path / "clinic.community"
    spec.write_text(GOOD_SPEC, encoding="utf-8")
    assert main(["parse", "--spec", str(spec)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("community Clinic {")
    assert "burden(screen, Officer)" in out


def test_parse_error_carries_position(tmp_path, capsys):
    spec = tmp_path / "broken.community"
    spec.write_text(BAD_SPEC, encoding="utf-8")
    assert main(["parse", "--spec", str(spec)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith("parse error: 2:")


def test_validate_reports_errors(tmp_path, capsys):
    spec = tmp_path / "dangling.community"
    spec.write_text(DANGLING_SPEC, encoding="utf-8")
    assert main(["validate", "--spec", str(spec)]) == EXIT_USAGE
    captured = capsys.readouterr()
    assert "Nobody" in captured.out
    assert "error(s)" in captured.err


def test_validate_accepts_good_spec(tmp_path, capsys):
    spec = tmp_path / "clinic.community"
    spec.write_text(GOOD_SPEC, encoding="utf-8")
    assert main(["validate", "--spec", str(spec)]) == EXIT_OK
    assert "Clinic: ok" in capsys.readouterr().out


def test_missing_file_is_a_usage_error(capsys):
    assert main(["parse", "--spec", "/nonexistent.community"]) == EXIT_USAGE


def test_argparse_usage_errors_exit_two():
    with pytest.raises(SystemExit) as info:
        main(["verify", "--trace", "x", "--property", "liveness"])
    assert info.value.code == EXIT_USAGE
