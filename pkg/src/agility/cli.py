"""Command line entry point: ``agility-sim {run,validate,diff-models,replay-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .divergence import CostConfig, CostMode, compute_divergence
from .errors import AgilityError, ParseError, ScenarioValidationError
from .model import diff, parse
from .scenario import bundled_scenarios, load_scenario, resolve_scenario_path, scenario_warnings
from .service import load_weight_profile
from .sim import replay_check, run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(resolve_scenario_path(args.scenario))
    changes = {}
    if args.threshold is not None:
        changes["threshold"] = args.threshold
    if args.weights is not None:
        changes["weights"] = load_weight_profile(args.weights)
    if args.eval_every is not None:
        changes["eval_every_ms"] = args.eval_every
    if changes:
        try:
            scenario = scenario.with_agility(**changes)
        except ValueError as exc:
            raise ScenarioValidationError([str(exc)]) from None
    out = Path(args.out) if args.out else Path("out") / scenario.name
    result = run(scenario, out)
    print(json.dumps({k: v for k, v in result.summary.items() if k != "wall_clock_s"}, sort_keys=True))
    print(f"outputs written to {out}")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(resolve_scenario_path(args.scenario))
    for w in scenario_warnings(scenario):
        print(f"warning: {w}")
    print(f"{scenario.name}: ok")
    return EXIT_OK


def _read_model(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse(text)


def _cmd_diff_models(args: argparse.Namespace) -> int:
    expected = _read_model(args.expected)
    field = _read_model(args.field)
    weights = load_weight_profile(args.weights or "default")
    report = compute_divergence(diff(expected, field), weights, CostConfig(CostMode(args.cost_mode)))
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_replay_check(args: argparse.Namespace) -> int:
    same = replay_check(args.log_a, args.log_b)
    print("identical" if same else "different")
    return EXIT_OK if same else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agility-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    names = ", ".join(sorted(bundled_scenarios()))
    p = sub.add_parser("run", help="simulate a scenario and write logs")
    p.add_argument("scenario", help=f"scenario file or bundled name ({names})")
    p.add_argument("--out", help="output directory (default: out/<scenario name>)")
    p.add_argument("--threshold", type=float)
    p.add_argument("--weights", help="weight profile file or builtin name (default, crisis)")
    p.add_argument("--eval-every", type=int, metavar="MS")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("validate", help="check a scenario without running it")
    p.add_argument("scenario")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("diff-models", help="divergence report between two model files")
    p.add_argument("expected")
    p.add_argument("field")
    p.add_argument("--weights")
    p.add_argument("--cost-mode", choices=[m.value for m in CostMode], default="unit")
    p.set_defaults(func=_cmd_diff_models)

    p = sub.add_parser("replay-check", help="exit 0 iff two event logs are identical")
    p.add_argument("log_a")
    p.add_argument("log_b")
    p.set_defaults(func=_cmd_replay_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AgilityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
