"""
Vectorsmith – Benchmark and synthesis routes.

Only bundled benchmarks (Settings.BENCHMARK_DIR) are reachable over HTTP.
Endpoints are plain `def`, so FastAPI runs them in its threadpool.
"""

import logging
import re
from fractions import Fraction
from pathlib import Path

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.config import get_settings, load_synthesis_defaults
from app.exceptions import BudgetExhausted, ConfigError, InsufficientData
from app.models.actions import AttackVector
from app.models.benchmark import Amount
from app.services.benchmarks import Benchmark, bundled_benchmarks, load_benchmark
from app.services.report import build_report
from app.services.run_monitor import RunMonitor
from app.services.synthesizer import SynthesisConfig, run, validate

logger = logging.getLogger(__name__)

router = APIRouter(tags=["synthesis"])

_NAME = re.compile(r"^[A-Za-z0-9_-]+$")


class SynthesizeRequest(BaseModel):
    benchmark: str
    max_length: int | None = Field(None, ge=1)
    iters: int | None = Field(None, ge=1)
    epsilon: float | None = Field(None, gt=0, lt=1)
    method: str | None = Field(None, pattern="^(poly|inter|exact)$")
    strengths: list[int] | None = None
    seed: int | None = None
    timeout_seconds: float | None = Field(None, gt=0)
    initial_points: int | None = Field(None, gt=0)
    cegdc: bool | None = None


class StepRequest(BaseModel):
    id: str
    params: list[Amount] = []


class ValidateRequest(BaseModel):
    benchmark: str
    actions: list[StepRequest] = Field(..., min_length=1)
    estimated_profit: str | None = None  # None: checked against its own execution
    epsilon: float | None = Field(None, gt=0, lt=1)


def _load(name: str, check_ground_truth: bool = True) -> Benchmark:
    if not _NAME.match(name):
        raise HTTPException(404, f"Benchmark {name!r} not found")
    try:
        return load_benchmark(name, check_ground_truth, Path(get_settings().BENCHMARK_DIR))
    except FileNotFoundError:
        raise HTTPException(404, f"Benchmark {name!r} not found")
    except ConfigError as e:
        raise HTTPException(422, e.errors)


@router.get("/benchmarks")
def list_benchmarks():
    """Bundled benchmarks with a short summary each."""
    out = []
    for name in bundled_benchmarks(Path(get_settings().BENCHMARK_DIR)):
        try:
            out.append(_load(name).summary())
        except HTTPException as e:
            out.append({"name": name, "error": e.detail})
    return {"benchmarks": out}


@router.get("/benchmarks/{name}")
def get_benchmark(name: str):
    bench = _load(name)
    return {**bench.summary(), "action_specs": [s.to_dict() for s in bench.specs]}


@router.post("/benchmarks/{name}/replay")
def replay_ground_truth(name: str):
    bench = _load(name, check_ground_truth=False)
    steps = bench.ground_truth_steps()
    if steps is None:
        raise HTTPException(404, f"Benchmark {name!r} has no ground truth")
    result = bench.world.run_vector(steps)
    return {
        "benchmark": bench.name,
        "reverted": result.reverted,
        "executed_prefix": result.executed_prefix,
        "per_token": {k: str(v) for k, v in sorted(result.profit.per_token.items())},
        "usd_profit": float(result.profit.usd_profit),
    }


@router.post("/synthesize")
def synthesize(req: SynthesizeRequest):
    """Run the synthesis loop synchronously and return the report."""
    bench = _load(req.benchmark)
    settings = get_settings()
    try:
        defaults = load_synthesis_defaults()
        config = SynthesisConfig.from_defaults(
            defaults,
            max_length=req.max_length or bench.config.max_length,
            max_iterations=req.iters,
            epsilon=req.epsilon,
            method=req.method,
            strengths=req.strengths,
            seed=req.seed if req.seed is not None else settings.DEFAULT_SEED,
            timeout_seconds=req.timeout_seconds or settings.RUN_TIMEOUT_SECONDS,
            initial_points=req.initial_points,
            cegdc=req.cegdc,
        )
    except ConfigError as e:
        raise HTTPException(422, e.errors)
    except ValueError as e:
        raise HTTPException(422, str(e))

    monitor = RunMonitor()
    try:
        result = run(config, bench, monitor)
    except (BudgetExhausted, InsufficientData) as e:
        raise HTTPException(422, str(e))
    logger.info("HTTP synthesis on %s: %d attacks", bench.name, len(result.attacks))
    return build_report(result, bench, config, monitor)


@router.post("/validate")
def validate_vector(req: ValidateRequest):
    bench = _load(req.benchmark)
    try:
        steps = [(bench.spec(s.id), tuple(s.params)) for s in req.actions]
        estimated = None if req.estimated_profit is None else Fraction(req.estimated_profit)
    except KeyError as e:
        raise HTTPException(422, str(e.args[0]))
    except ValueError as e:
        raise HTTPException(422, str(e))
    for spec, params in steps:
        if len(params) != len(spec.params):
            raise HTTPException(422, f"{spec.id}: expected {len(spec.params)} parameters, got {len(params)}")
    if estimated is None:
        estimated = bench.world.run_vector(steps).profit.usd_profit
    epsilon = req.epsilon if req.epsilon is not None else load_synthesis_defaults().synthesis.epsilon
    attack = validate(bench.world, AttackVector(steps, estimated), epsilon)
    return attack.to_dict()
