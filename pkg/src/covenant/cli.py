"""Command-line interface.

Subcommands: parse, validate, run, verify, audit, scenarios. Exit codes:
0 success and zero violations, 1 violations found, 2 usage or parse error,
3 audit-trail integrity failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import (
    CannotInject,
    CovenantError,
    IntegrityError,
    InvalidTemplate,
    ParseError,
    ScriptError,
    UnknownIdentifier,
)
from .runtime import MODE_AUTONOMOUS, MODES, parse_export, verify_chain
from .scenarios import (
    ScenarioReport,
    built_in_scenarios,
    coverage_report,
    get_scenario,
    inject_violation,
    parse_script,
    run_scenario,
    run_stage,
    stage_from_script,
)
from .spec_lang import format_spec, parse_spec
from .spec_lang.validate import SEVERITY_ERROR, validate_template
from .verifier import PropertySpec, run_checks

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _cmd_parse(args: argparse.Namespace) -> int:
    template = parse_spec(_read(args.spec))
    sys.stdout.write(format_spec(template))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    template = parse_spec(_read(args.spec))
    findings = validate_template(template)
    for finding in findings:
        print(finding)
    errors = [f for f in findings if f.severity == SEVERITY_ERROR]
    if errors:
        print(f"{len(errors)} error(s)", file=sys.stderr)
        return EXIT_USAGE
    print(f"{template.name}: ok ({len(findings)} warning(s))")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    if args.scenario:
        scenario = get_scenario(args.scenario)
        if args.inject:
            scenario = inject_violation(scenario, args.inject)
        report = run_scenario(scenario)
    elif args.spec and args.script:
        stage = stage_from_script(
            _read(args.spec),
            parse_script(_read(args.script)),
            owner=args.owner,
            mode=args.mode,
        )
        report = ScenarioReport(name=Path(args.script).stem, stages=(run_stage(stage),))
    else:
        print("run needs either --scenario or both --spec and --script", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for index, stage in enumerate(report.stages):
        path = out_dir / f"{report.name}.{index}.{stage.community}.audit"
        path.write_text(stage.export, encoding="utf-8")
        print(f"wrote {path}")
    print(report.summary())

    if not report.ok:
        return EXIT_VIOLATIONS
    if any(stage.violations for stage in report.stages):
        return EXIT_VIOLATIONS
    return EXIT_OK


def _property_spec(args: argparse.Namespace) -> PropertySpec:
    name = args.property
    if name == "safety":
        if not args.action or not args.burden:
            raise UnknownIdentifier("safety needs --action and --burden")
        return PropertySpec.safety(args.action, args.burden)
    if name == "authority":
        if not args.action or not args.role:
            raise UnknownIdentifier("authority needs --action and --role")
        return PropertySpec.authority(args.action, args.role)
    if name == "prohibition":
        if not args.action or not args.group:
            raise UnknownIdentifier("prohibition needs --action and --group")
        return PropertySpec.prohibition(args.action, args.group)
    return PropertySpec.accountability()


def _cmd_verify(args: argparse.Namespace) -> int:
    _header, records = parse_export(_read(args.trace))
    verify_chain(records)
    template = parse_spec(_read(args.spec)) if args.spec else None
    spec = _property_spec(args)
    violations = run_checks(records, (spec,), template)
    lines = [v.to_line() for v in violations]
    for line in lines:
        print(line)
    if args.report:
        Path(args.report).write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
        print(f"wrote {args.report}", file=sys.stderr)
    print(f"{len(violations)} violation(s)", file=sys.stderr)
    return EXIT_VIOLATIONS if violations else EXIT_OK


def _cmd_audit(args: argparse.Namespace) -> int:
    _header, records = parse_export(_read(args.trace))
    verify_chain(records)
    head = records[-1]
    print(f"ok: {len(records)} records, head seq {head.seq}, digest {head.hash}")
    return EXIT_OK


def _cmd_scenarios(args: argparse.Namespace) -> int:
    scenarios = built_in_scenarios()
    if not args.run and not args.coverage:
        for scenario in scenarios:
            communities = ", ".join(stage.community for stage in scenario.stages)
            print(f"{scenario.name}: {scenario.synopsis} [{communities}]")
        return EXIT_OK

    worst = EXIT_OK
    if args.run:
        for scenario in scenarios:
            report = run_scenario(scenario)
            print(report.summary())
            if not report.ok or any(stage.violations for stage in report.stages):
                worst = EXIT_VIOLATIONS
    if args.coverage:
        print(coverage_report().text())
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covenant",
        description="deontic governance engine for multi-agent communities",
    )
    parser.add_argument("--version", action="version", version=f"covenant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a community spec and print its canonical form")
    p.add_argument("--spec", required=True, help="path to a .community file")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("validate", help="parse and run semantic checks on a community spec")
    p.add_argument("--spec", required=True, help="path to a .community file")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("run", help="execute a scenario and write its audit export")
    p.add_argument("--scenario", help="built-in scenario name")
    p.add_argument(
        "--inject",
        choices=("safety", "authority", "prohibition", "accountability"),
        help="run the mutated variant that violates the given property",
    )
    p.add_argument("--spec", help="community spec for an ad-hoc script run")
    p.add_argument("--script", help="event script file for an ad-hoc run")
    p.add_argument("--owner", default="community_owner", help="owning principal for ad-hoc runs")
    p.add_argument("--mode", default=MODE_AUTONOMOUS, choices=MODES, help="deployment mode")
    p.add_argument("--out", default=".", help="directory for audit exports")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="check one property over an audit export")
    p.add_argument("--trace", required=True, help="audit export file")
    p.add_argument(
        "--property",
        required=True,
        choices=("safety", "authority", "prohibition", "accountability"),
    )
    p.add_argument("--action", help="action the property constrains")
    p.add_argument("--burden", help="guard burden action (safety)")
    p.add_argument("--role", help="authorized role (authority)")
    p.add_argument("--group", help="prohibited group (prohibition)")
    p.add_argument("--spec", help="community spec for declared group and role lookups")
    p.add_argument("--report", help="write the violation report to this file")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("audit", help="re-verify hash-chain integrity of an export")
    p.add_argument("--trace", required=True, help="audit export file")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("scenarios", help="list or run the built-in scenarios")
    p.add_argument("--run", action="store_true", help="run every built-in scenario")
    p.add_argument("--coverage", action="store_true", help="print the coverage report")
    p.set_defaults(func=_cmd_scenarios)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"integrity failure at seq {exc.bad_seq}: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScriptError, CannotInject, UnknownIdentifier, InvalidTemplate) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CovenantError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
