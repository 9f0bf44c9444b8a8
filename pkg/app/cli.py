#!/usr/bin/env python3
"""
Vectorsmith – command-line interface.

Usage:
    python -m app synthesize --benchmark harvest --out report.json
    python -m app synthesize --benchmark warp --method exact --max-length 5
    python -m app collect --benchmark harvest --points 200 --out points.jsonl
    python -m app fit --benchmark harvest --points-file points.jsonl --out models.json
    python -m app validate --benchmark harvest --report report.json --index 0
    python -m app replay --benchmark harvest
    python -m app mine --interfaces app/benchmarks/traces/harvest_interfaces.yml \\
        --traces app/benchmarks/traces/harvest_traces.jsonl --benchmark harvest --out candidates.json

Exit codes: 0 success, 2 configuration error, 3 no validated attack with --require-attack.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from app.config import get_settings, load_synthesis_defaults
from app.exceptions import BudgetExhausted, ConfigError, InsufficientData
from app.models.actions import AttackStatus, AttackVector
from app.models.datapoint import dump_points, load_points
from app.services.approximator import Method, dump_models, fit_all
from app.services.benchmarks import load_benchmark
from app.services.report import build_report, render_report, write_report
from app.services.run_monitor import RunMonitor, default_workers
from app.services.sampler import collect_initial, raw_dependencies_from_specs
from app.services.synthesizer import SynthesisConfig, run, validate
from app.services.traceminer import dump_json, load_interfaces, load_traces, mine

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_ATTACK = 3


def _strengths(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated levels, got {text!r}") from None


def _emit(payload, out: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _run_config(args, defaults, bench) -> SynthesisConfig:
    settings = get_settings()
    workers = args.workers if args.workers is not None else (settings.MAX_WORKERS or default_workers())
    return SynthesisConfig.from_defaults(
        defaults,
        max_length=args.max_length or bench.config.max_length,
        max_iterations=args.iters,
        epsilon=args.epsilon,
        max_repeat=args.max_repeat,
        timeout_seconds=args.timeout,
        seed=args.seed if args.seed is not None else settings.DEFAULT_SEED,
        method=args.method,
        degree=args.degree,
        strengths=args.strengths,
        cegdc=False if args.no_cegdc else None,
        workers=workers,
        initial_points=args.points,
    )


# ── Subcommands ──────────────────────────────────────────────

def cmd_collect(args, defaults) -> int:
    bench = load_benchmark(args.benchmark)
    config = SynthesisConfig.from_defaults(defaults, seed=args.seed, initial_points=args.points,
                                           log_uniform=True if args.log_uniform else None)
    points = collect_initial(bench.world, bench.specs, raw_dependencies_from_specs(bench.specs),
                             config.sample_budget())
    dump_points(points, args.out)
    logger.info("Wrote %d points for %d actions to %s",
                sum(len(v) for v in points.values()), len(points), args.out)
    return EXIT_OK


def cmd_fit(args, defaults) -> int:
    bench = load_benchmark(args.benchmark)
    method = Method(args.method or defaults.approximator.method)
    if method is Method.EXACT:
        raise ConfigError("fit: method exact uses no surrogates")
    models = fit_all(bench.specs, load_points(args.points_file), method,
                     args.degree or defaults.approximator.degree)
    dump_models(models, args.out)
    logger.info("Fitted %d actions with %s surrogates", len(models), method.value)
    return EXIT_OK


def cmd_synthesize(args, defaults) -> int:
    bench = load_benchmark(args.benchmark)
    config = _run_config(args, defaults, bench)
    monitor = RunMonitor()
    points = load_points(args.points_file) if args.points_file else None
    result = run(config, bench, monitor, points)
    report = build_report(result, bench, config, monitor)
    if args.out:
        write_report(report, args.out)
    else:
        sys.stdout.write(render_report(report))
    validated = [a for a in result.attacks if a.status is AttackStatus.VALIDATED]
    logger.info("%d validated attack vectors", len(validated))
    if args.require_attack and not validated:
        return EXIT_NO_ATTACK
    return EXIT_OK


def _steps_from_report(bench, report_path: str, index: int):
    report = json.loads(Path(report_path).read_text(encoding="utf-8"))
    try:
        vector = report["vectors"][index]
    except (KeyError, IndexError):
        raise ConfigError(f"{report_path}: no vector at index {index}") from None
    steps = [(bench.spec(a["id"]), tuple(int(v) for v in a["params"])) for a in vector["actions"]]
    return steps, Fraction(vector["estimated_profit"])


def cmd_validate(args, defaults) -> int:
    bench = load_benchmark(args.benchmark)
    if args.report:
        steps, estimated = _steps_from_report(bench, args.report, args.index)
    else:
        steps = bench.ground_truth_steps()
        if steps is None:
            raise ConfigError(f"{bench.name}: no ground truth; pass --report")
        # Checked against the profit replayed at load time.
        estimated = bench.ground_truth_profit
    epsilon = args.epsilon if args.epsilon is not None else defaults.synthesis.epsilon
    attack = validate(bench.world, AttackVector(steps, estimated), epsilon)
    _emit(attack.to_dict(), args.out)
    return EXIT_OK


def cmd_replay(args, defaults) -> int:
    bench = load_benchmark(args.benchmark, check_ground_truth=False)
    summary = bench.summary()
    steps = bench.ground_truth_steps()
    if steps is not None:
        run_ = bench.world.run_vector(steps)
        summary["replay"] = {
            "reverted": run_.reverted,
            "executed_prefix": run_.executed_prefix,
            "per_token": {k: str(v) for k, v in sorted(run_.profit.per_token.items())},
            "usd_profit": float(run_.profit.usd_profit),
        }
    _emit(summary, args.out)
    return EXIT_OK


def cmd_mine(args, defaults) -> int:
    bench = load_benchmark(args.benchmark, check_ground_truth=False)
    result = mine(
        load_interfaces(args.interfaces),
        load_traces(args.traces),
        bench.world,
        max_choices=args.max_choices or defaults.traceminer.max_choices,
        caller=args.caller,
        probe_amount=args.probe_amount or defaults.traceminer.probe_amount,
    )
    dump_json(result.to_json(), args.out)
    logger.info("Wrote %d candidates to %s", len(result.actions), args.out)
    return EXIT_OK


# ── Parser ───────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vectorsmith", description="Flash-loan attack vector synthesis")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--config", default=None, help="Run defaults (default: config/synthesis.yml)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="Sample initial data points")
    p.add_argument("--benchmark", required=True, help="Bundled name or path to a YAML benchmark")
    p.add_argument("--points", type=int, default=None, help="Points per approximated action")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-uniform", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("fit", help="Fit surrogates to collected points")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--points-file", required=True)
    p.add_argument("--method", choices=["poly", "inter"], default=None)
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synthesize", help="Run the full synthesis loop")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--max-length", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-repeat", type=int, default=None)
    p.add_argument("--method", choices=["poly", "inter", "exact"], default=None)
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--strengths", type=_strengths, default=None, help="e.g. 1,2,3")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None, help="Wall-clock budget in seconds")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--points-file", default=None, help="Reuse points from `collect`")
    p.add_argument("--no-cegdc", action="store_true", help="Disable counterexample-guided collection")
    p.add_argument("--require-attack", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("validate", help="Execute a reported vector (or the ground truth)")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay", help="Replay a benchmark's ground truth")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("mine", help="Mine action candidates from recorded traces")
    p.add_argument("--interfaces", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--max-choices", type=int, default=None)
    p.add_argument("--caller", default=None, help="Probe account (default: the adversary)")
    p.add_argument("--probe-amount", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mine)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    level = logging.DEBUG if (args.verbose or settings.DEBUG) else getattr(logging, settings.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s | %(message)s")
    try:
        defaults = load_synthesis_defaults(args.config)
        return args.func(args, defaults)
    except ConfigError as e:
        for err in e.errors:
            logger.error("%s", err)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except (BudgetExhausted, InsufficientData) as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
