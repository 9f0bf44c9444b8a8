"""
Vectorsmith – Run reports.

Reports are self-contained: they echo the run configuration and seed next to
the results. Everything except the "timing" section is deterministic for a
fixed configuration, and the JSON is written with sorted keys.
"""

from __future__ import annotations

import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Any

from app.models.actions import AttackVector
from app.services.benchmarks import Benchmark
from app.services.run_monitor import RunMonitor
from app.services.synthesizer import SynthesisConfig, SynthesisResult

logger = logging.getLogger(__name__)

TIMING_KEY = "timing"


def normalized_profit(actual: Fraction | None, ground_truth: Fraction | None) -> float | None:
    """Synthesized profit as a share of the ground-truth attack's profit."""
    if actual is None or not ground_truth:
        return None
    return float(Fraction(actual) / Fraction(ground_truth))


def attack_entry(attack: AttackVector, ground_truth: Fraction | None) -> dict[str, Any]:
    entry = attack.to_dict()
    entry["actual_profit_usd"] = None if attack.actual_profit is None else round(float(attack.actual_profit), 6)
    entry["estimated_profit_usd"] = round(float(attack.estimated_profit), 6)
    entry["normalized_profit"] = normalized_profit(attack.actual_profit, ground_truth)
    return entry


def build_report(result: SynthesisResult, benchmark: Benchmark, config: SynthesisConfig,
                 monitor: RunMonitor | None = None) -> dict[str, Any]:
    gt = benchmark.ground_truth_profit
    vectors = [attack_entry(a, gt) for a in result.attacks]
    best = max((v["normalized_profit"] for v in vectors if v["normalized_profit"] is not None), default=None)
    return {
        "benchmark": benchmark.name,
        "seed": config.seed,
        "config": config.model_dump(mode="json"),
        "ground_truth_profit": None if gt is None else round(float(gt), 6),
        "best_normalized_profit": best,
        "vectors": vectors,
        "data_points": {
            "idp": result.idp,
            "tdp": result.tdp,
        },
        "pruning": result.pruning.to_dict(),
        "iterations": result.iterations,
        "counterexamples": result.counterexamples,
        "timed_out": result.timed_out,
        "priority": result.vectors,
        TIMING_KEY: monitor.get_stats().to_dict() if monitor is not None else {},
    }


def without_timing(report: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in report.items() if k != TIMING_KEY}


def render_report(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(report), encoding="utf-8")
    logger.info("Report written to %s (%d vectors)", path, len(report.get("vectors", [])))
    return path
