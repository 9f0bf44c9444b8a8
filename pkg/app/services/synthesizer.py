"""
Vectorsmith – Attack vector synthesis loop.

  collect -> fit -> enumerate + prune -> (optimize -> validate) per vector
          -> counterexample-guided collection -> refit -> rescore -> repeat

Vectors are scored after every iteration: a validated profitable vector
scores its profit, anything else a small score from optimizer diagnostics.
A vector whose score does not increase is dropped.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.exceptions import MissingSurrogate, NoFeasiblePoint
from app.models.actions import ActionSpec, AttackStatus, AttackVector, SymbolicVector
from app.models.datapoint import DataPoint, SampleBudget, count_points
from app.services.approximator import ActionSurrogates, Method, VectorEstimator, fit_all
from app.services.benchmarks import Benchmark
from app.services.optimizer import DEFAULT_STRENGTHS, OptResult, StrengthLevel, construct, solve
from app.services.run_monitor import RunMonitor
from app.services.sampler import collect_initial, raw_dependencies_from_specs
from app.services.world import World

if TYPE_CHECKING:
    from app.config import SynthesisDefaults

logger = logging.getLogger(__name__)


class SynthesisConfig(BaseModel):
    max_length: int = Field(4, ge=1)
    max_iterations: int = Field(3, ge=1)
    epsilon: float = Field(0.05, gt=0, lt=1)
    max_repeat: int | None = Field(None, ge=1)
    timeout_seconds: float = Field(600.0, gt=0)
    seed: int = 0
    method: Method = Method.POLY
    degree: int = Field(2, ge=1, le=3)
    strengths: list[int] = [1, 2, 3]
    cegdc: bool = True
    workers: int = Field(1, ge=1)
    initial_points: int = Field(200, gt=0)
    log_uniform: bool = False
    predecessor_probability: float = Field(0.5, ge=0, le=1)
    max_attempt_factor: int = Field(10, ge=1)
    strength_levels: dict[int, StrengthLevel] = Field(default_factory=lambda: dict(DEFAULT_STRENGTHS))

    model_config = {"arbitrary_types_allowed": True}

    @field_validator("strengths")
    @classmethod
    def _known_levels(cls, v: list[int]) -> list[int]:
        if not v or any(s not in (1, 2, 3) for s in v):
            raise ValueError("strengths must be a non-empty list drawn from 1, 2, 3")
        return v

    @property
    def repeat_cap(self) -> int:
        return self.max_repeat or math.ceil(self.max_length / 2)

    def strength_for(self, iteration: int) -> StrengthLevel:
        level = self.strengths[min(iteration, len(self.strengths) - 1)]
        return self.strength_levels[level]

    def sample_budget(self) -> SampleBudget:
        return SampleBudget(initial_per_action=self.initial_points, seed=self.seed,
                            log_uniform=self.log_uniform,
                            predecessor_probability=self.predecessor_probability,
                            max_attempt_factor=self.max_attempt_factor)

    @classmethod
    def from_defaults(cls, defaults: "SynthesisDefaults", **overrides) -> "SynthesisConfig":
        """Run configuration from config/synthesis.yml; None-valued overrides are ignored."""
        loop, sampler, approx = defaults.synthesis, defaults.sampler, defaults.approximator
        values = dict(
            max_length=loop.max_length, max_iterations=loop.max_iterations, epsilon=loop.epsilon,
            max_repeat=loop.max_repeat, timeout_seconds=loop.timeout_seconds, strengths=loop.schedule,
            cegdc=loop.cegdc, method=Method(approx.method), degree=approx.degree,
            initial_points=sampler.initial_per_action, log_uniform=sampler.log_uniform,
            predecessor_probability=sampler.predecessor_probability,
            max_attempt_factor=sampler.max_attempt_factor,
            strength_levels={
                level: StrengthLevel(level, s.points_per_dim, s.refinement_iterations, s.local_polish_budget)
                for level, s in defaults.optimizer.strengths.items()
            },
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class PriorityEntry:
    vector: SymbolicVector
    score: float = 0.0
    last_score: float | None = None
    dropped: bool = False
    best_params: tuple | None = None


@dataclass
class PruningStats:
    enumerated: int = 0
    after_h1: int = 0
    after_h2: int = 0
    after_h3: int = 0

    def to_dict(self) -> dict[str, int]:
        return {"enumerated": self.enumerated, "after_h1": self.after_h1,
                "after_h2": self.after_h2, "after_h3": self.after_h3}


@dataclass
class SynthesisResult:
    attacks: list[AttackVector]
    idp: dict[str, int]
    tdp: dict[str, int]
    pruning: PruningStats
    iterations: int
    counterexamples: int
    timed_out: bool
    points: dict[str, list[DataPoint]] = field(default_factory=dict)
    vectors: list[dict] = field(default_factory=list)


# ── Enumeration and pruning ───────────────────────────────────

def enumerate_vectors(specs: Sequence[ActionSpec], max_length: int) -> list[SymbolicVector]:
    if max_length < 1:
        raise ValueError("max_length must be >= 1")
    out = []
    for length in range(1, max_length + 1):
        out += [SymbolicVector(combo) for combo in product(specs, repeat=length)]
    return out


@dataclass(frozen=True)
class TokenFlowGraph:
    """What the adversary holds up front, and which actions mint which tokens."""
    initial_tokens: frozenset[str]

    @classmethod
    def from_world(cls, world: World) -> "TokenFlowGraph":
        held = world.state.holdings(world.adversary)
        return cls(frozenset(t for t, v in held.items() if v > 0))


def _no_adjacent_duplicates(vector: SymbolicVector) -> bool:
    ids = vector.ids
    return all(a != b for a, b in zip(ids, ids[1:]))


def _within_repeat_cap(vector: SymbolicVector, cap: int) -> bool:
    ids = vector.ids
    return all(ids.count(i) <= cap for i in set(ids))


def _preconditions_met(vector: SymbolicVector, graph: TokenFlowGraph) -> bool:
    available = set(graph.initial_tokens)
    for spec in vector:
        if any(t not in available for t in spec.tokens_in):
            return False
        available.update(spec.tokens_out)
    return True


def is_feasible(vector: SymbolicVector, graph: TokenFlowGraph, max_repeat: int | None = None) -> bool:
    cap = max_repeat if max_repeat is not None else math.ceil(len(vector) / 2)
    return (_no_adjacent_duplicates(vector) and _within_repeat_cap(vector, cap)
            and _preconditions_met(vector, graph))


def prune(vectors: Iterable[SymbolicVector], graph: TokenFlowGraph,
          max_repeat: int) -> tuple[list[SymbolicVector], PruningStats]:
    vectors = list(vectors)
    stats = PruningStats(enumerated=len(vectors))
    kept = [v for v in vectors if _no_adjacent_duplicates(v)]
    stats.after_h1 = len(kept)
    kept = [v for v in kept if _within_repeat_cap(v, max_repeat)]
    stats.after_h2 = len(kept)
    kept = [v for v in kept if _preconditions_met(v, graph)]
    stats.after_h3 = len(kept)
    return kept, stats


# ── Validation ────────────────────────────────────────────────

def is_counterexample(estimated: float | Fraction, actual: float | Fraction, epsilon: float) -> bool:
    gap = abs(Fraction(estimated) - Fraction(actual))
    return gap > 0 and gap >= Fraction(str(epsilon)) * (abs(Fraction(estimated)) + abs(Fraction(actual)))


def validate(world: World, candidate: AttackVector, epsilon: float) -> AttackVector:
    run = world.run_vector(candidate.steps)
    candidate.actual_profit = run.profit.usd_profit
    candidate.per_token = dict(run.profit.per_token)
    candidate.executed_prefix = run.executed_prefix
    if run.reverted:
        candidate.status = AttackStatus.REVERTED
        candidate.revert_reason = run.records[-1].revert_reason
    elif is_counterexample(candidate.estimated_profit, candidate.actual_profit, epsilon):
        candidate.status = AttackStatus.COUNTEREXAMPLE
    else:
        candidate.status = AttackStatus.VALIDATED
    return candidate


# ── Counterexample-guided data collection ─────────────────────

def _accurate(estimated: np.ndarray, actual: np.ndarray, epsilon: float) -> bool:
    scale = np.maximum(1.0, np.abs(actual))
    return bool(np.all(np.abs(estimated - actual) < epsilon * scale))


def cegdc(counterexample: AttackVector, world: World, estimator: VectorEstimator,
          epsilon: float) -> dict[str, list[DataPoint]]:
    """New data points for the mis-estimated tail of a counterexample."""
    steps = counterexample.steps
    traj = estimator.run([values for _, values in steps])

    sandbox = world.clone()
    records, actual_states, actual_balances = [], [], []
    for spec, values in steps:
        rec = sandbox.execute(spec, values)
        records.append(rec)
        if rec.reverted:
            break
        actual_states.append(np.array([float(sandbox.read(r)) for r in estimator.refs]))
        actual_balances.append(np.array([float(sandbox.state.balance_of(sandbox.adversary, t))
                                         for t in estimator.tokens]))
    executed = len(actual_states)

    new: dict[str, list[DataPoint]] = {}
    for k in range(executed, 0, -1):
        if k - 1 < len(traj.states):
            est = np.concatenate([traj.states[k - 1], traj.balances[k - 1]])
            act = np.concatenate([actual_states[k - 1], actual_balances[k - 1]])
            if _accurate(est, act, epsilon):
                break
        spec, _ = steps[k - 1]
        if estimator.exact[k - 1]:
            continue
        rec = records[k - 1]
        new.setdefault(spec.id, []).append(
            DataPoint(rec.prestates, rec.params, rec.poststates, rec.token_deltas))
    if not new:
        # States agree within epsilon but the outcome did not; refine the last approximated step.
        for k in range(executed, 0, -1):
            if not estimator.exact[k - 1]:
                spec, _ = steps[k - 1]
                rec = records[k - 1]
                new[spec.id] = [DataPoint(rec.prestates, rec.params, rec.poststates, rec.token_deltas)]
                break
    return new


# ── One optimize/validate task ────────────────────────────────

@dataclass
class _Task:
    index: int
    vector: SymbolicVector
    world: World
    surrogates: dict[str, ActionSurrogates]
    exact_ids: frozenset[str]
    strength: StrengthLevel
    seed: int
    warm: tuple | None
    epsilon: float
    cegdc: bool


@dataclass
class _Outcome:
    index: int
    opt: OptResult | None
    attack: AttackVector | None
    new_points: dict[str, list[DataPoint]]
    error: str | None = None


def _run_task(task: _Task) -> _Outcome:
    try:
        problem = construct(task.vector, task.surrogates, task.world, task.exact_ids)
        opt = solve(problem, task.strength, task.seed,
                    warm_starts=[task.warm] if task.warm is not None else ())
    except (NoFeasiblePoint, MissingSurrogate) as exc:
        return _Outcome(task.index, None, None, {}, str(exc))

    steps = list(zip(task.vector.actions, [spec.clamp(v) for spec, v in
                                           zip(task.vector, task.vector.split(opt.best_params))]))
    attack = validate(task.world, AttackVector(steps, opt.best_estimated_profit), task.epsilon)
    new_points = {}
    if task.cegdc and attack.status in (AttackStatus.COUNTEREXAMPLE, AttackStatus.REVERTED):
        estimator = VectorEstimator(task.vector, task.surrogates, task.world, task.exact_ids)
        new_points = cegdc(attack, task.world, estimator, task.epsilon)
    return _Outcome(task.index, opt, attack, new_points)


def _task_seed(seed: int, iteration: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, index]).generate_state(1)[0])


# ── Driver ────────────────────────────────────────────────────

def _agreement(attack: AttackVector) -> float:
    """1 when estimate and execution agree, falling to 0 as they diverge."""
    est, act = Fraction(attack.estimated_profit), Fraction(attack.actual_profit or 0)
    total = abs(est) + abs(act)
    return 1.0 if total == 0 else float(1 - abs(est - act) / total)


def _score(outcome: _Outcome) -> float:
    a = outcome.attack
    if a is not None and a.status is AttackStatus.VALIDATED and a.actual_profit and a.actual_profit > 0:
        return float(a.actual_profit)
    if outcome.opt is None:
        return 1.0
    diagnostic = outcome.opt.positive_rate
    if a is not None and a.status is AttackStatus.COUNTEREXAMPLE:
        # A counterexample that refitting brings closer to execution keeps improving.
        diagnostic = (diagnostic + _agreement(a)) / 2
    return 1.0 + 9.0 * diagnostic


def run(config: SynthesisConfig, benchmark: Benchmark, monitor: RunMonitor | None = None,
        points: Mapping[str, list[DataPoint]] | None = None) -> SynthesisResult:
    monitor = monitor or RunMonitor()
    started = time.monotonic()
    world = benchmark.world
    specs = benchmark.specs
    exact_ids = frozenset(s.id for s in specs if config.method is Method.EXACT or not s.approximate)
    approx_ids = [s.id for s in specs if s.id not in exact_ids]

    def timed_out() -> bool:
        return time.monotonic() - started > config.timeout_seconds

    with monitor.phase("collect"):
        if points is None:
            budget = config.sample_budget()
            points = collect_initial(world, specs, raw_dependencies_from_specs(specs), budget,
                                     targets=approx_ids)
        data = {k: list(v) for k, v in points.items() if k in approx_ids}
    idp = count_points(data)

    with monitor.phase("fit"):
        # Exact runs collect nothing, so there is nothing to fit.
        surrogates = fit_all(specs, data, config.method, config.degree)

    with monitor.phase("enumerate"):
        graph = TokenFlowGraph.from_world(world)
        kept, pruning = prune(enumerate_vectors(specs, config.max_length), graph, config.repeat_cap)
    logger.info("Pruned %d vectors to %d (H1 %d, H2 %d, H3 %d)", pruning.enumerated, len(kept),
                pruning.after_h1, pruning.after_h2, pruning.after_h3)

    entries = [PriorityEntry(v) for v in kept]
    best: dict[tuple[str, ...], AttackVector] = {}
    counterexamples = 0
    timed = False
    iteration = 0

    for iteration in range(config.max_iterations):
        active = [(k, e) for k, e in enumerate(entries) if not e.dropped]
        if not active:
            break
        if timed_out():
            timed = True
            break
        strength = config.strength_for(iteration)
        logger.info("Iteration %d: %d vectors at strength %d", iteration + 1, len(active), strength.level)
        tasks = [
            _Task(k, e.vector, world, {i: surrogates[i] for i in e.vector.ids if i in surrogates},
                  exact_ids, strength, _task_seed(config.seed, iteration, k), e.best_params,
                  config.epsilon, config.cegdc)
            for k, e in active
        ]

        outcomes: list[_Outcome] = []
        with monitor.phase("optimize"):
            if config.workers > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=config.workers) as pool:
                    for outcome in pool.map(_run_task, tasks):
                        outcomes.append(outcome)
            else:
                for task in tasks:
                    if timed_out():
                        timed = True
                        break
                    outcomes.append(_run_task(task))

        # Barrier: merge in task order.
        touched: set[str] = set()
        for outcome in outcomes:
            entry = entries[outcome.index]
            monitor.count("optimizations")
            if outcome.opt is not None:
                monitor.count("objective_evaluations", outcome.opt.evaluations)
                entry.best_params = outcome.opt.best_params
            attack = outcome.attack
            if attack is not None:
                if attack.status is AttackStatus.VALIDATED and attack.actual_profit > 0:
                    key = entry.vector.ids
                    if key not in best or attack.actual_profit > best[key].actual_profit:
                        best[key] = attack
                        logger.info("Validated %s: %.2f USD", entry.vector.label(), float(attack.actual_profit))
                elif attack.status in (AttackStatus.COUNTEREXAMPLE, AttackStatus.REVERTED):
                    counterexamples += 1
                    monitor.count("counterexamples")
                    if attack.status is AttackStatus.REVERTED:
                        monitor.count("reverts")
            for action_id, new in outcome.new_points.items():
                data.setdefault(action_id, []).extend(new)
                touched.add(action_id)

            score = _score(outcome)
            if entry.last_score is not None and score <= entry.last_score:
                entry.dropped = True
                monitor.count("dropped_vectors")
                logger.debug("Dropped %s (score %.3f <= %.3f)", entry.vector.label(), score, entry.last_score)
            entry.last_score = entry.score = score

        if touched:
            with monitor.phase("fit"):
                surrogates.update(fit_all(specs, data, config.method, config.degree, only=touched))
            logger.info("Refitted %s with counterexample data", ", ".join(sorted(touched)))
        if timed:
            break

    if timed:
        logger.warning("Timeout after %.0fs; returning best results so far", time.monotonic() - started)

    attacks = sorted(best.values(), key=lambda a: (-a.actual_profit, [s.id for s, _ in a.steps]))
    vectors = [{"vector": list(e.vector.ids), "score": e.score, "dropped": e.dropped} for e in entries]
    return SynthesisResult(attacks, idp, count_points(data), pruning, iteration + 1,
                           counterexamples, timed, data, vectors)
