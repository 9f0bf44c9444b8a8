"""
Vectorsmith – Initial data collection.

Every point starts from the benchmark's base state. Before the target runs,
the sampler may execute:
  - a producer action, when the target consumes a token the adversary does
    not hold at the base state (withdraw needs shares from a deposit);
  - one RAW predecessor, with configurable probability, to move the target's
    prestates away from the base values.
Reverted samples are dropped and do not count toward the budget.
"""

from __future__ import annotations

import logging
import math
import random
from typing import Iterable, Sequence

from app.exceptions import BudgetExhausted
from app.models.actions import ActionSpec, SymbolicParam
from app.models.datapoint import DataPoint, SampleBudget
from app.services.world import ExecutionRecord, World, token_delta_of

logger = logging.getLogger(__name__)


def raw_dependencies_from_specs(specs: Sequence[ActionSpec]) -> dict[str, list[str]]:
    """b precedes a when a reads a state b declares as written. Self-edges kept."""
    deps: dict[str, list[str]] = {}
    for a in specs:
        reads = set(a.prestates)
        deps[a.id] = [b.id for b in specs if reads & set(b.poststates)]
    return deps


def producers_of(specs: Sequence[ActionSpec], token: str) -> list[ActionSpec]:
    return [s for s in specs if token in s.tokens_out]


def sample_param(rng: random.Random, param: SymbolicParam, log_uniform: bool = False) -> int:
    if log_uniform and param.upper > param.lower:
        lo, hi = math.log(param.lower), math.log(param.upper)
        value = int(round(math.exp(rng.uniform(lo, hi))))
        return min(max(value, param.lower), param.upper)
    return rng.randint(param.lower, param.upper)


def sample_params(rng: random.Random, spec: ActionSpec, log_uniform: bool = False) -> tuple[int, ...]:
    return tuple(sample_param(rng, p, log_uniform) for p in spec.params)


def to_datapoint(record: ExecutionRecord) -> DataPoint | None:
    deltas = token_delta_of(record)
    if deltas is None:
        return None
    return DataPoint(record.prestates, record.params, record.poststates, deltas)


def _action_rng(seed: int, action_id: str) -> random.Random:
    # String seeds hash with sha512, so streams are stable across processes.
    return random.Random(f"{seed}:{action_id}")


def collect_for_action(world: World, spec: ActionSpec, specs: Sequence[ActionSpec],
                       predecessors: Iterable[str], budget: SampleBudget) -> list[DataPoint]:
    by_id = {s.id: s for s in specs}
    preds = [by_id[p] for p in predecessors if p in by_id]
    missing = [t for t in spec.tokens_in if world.state.balance_of(world.adversary, t) == 0]
    feeders = {t: [p for p in producers_of(specs, t) if p.id != spec.id] for t in missing}

    rng = _action_rng(budget.seed, spec.id)
    sandbox = world.clone()
    base = sandbox.snapshot()
    target = budget.initial_per_action
    limit = budget.max_attempt_factor * target
    points: list[DataPoint] = []
    attempts = 0

    while len(points) < target:
        if attempts >= limit:
            raise BudgetExhausted(
                f"{spec.id}: only {len(points)}/{target} points after {attempts} attempts"
            )
        attempts += 1
        sandbox.restore(base)

        for token, options in feeders.items():
            if options and sandbox.state.balance_of(sandbox.adversary, token) == 0:
                producer = rng.choice(options)
                sandbox.execute(producer, sample_params(rng, producer, budget.log_uniform))
        if preds and rng.random() < budget.predecessor_probability:
            pred = rng.choice(preds)
            sandbox.execute(pred, sample_params(rng, pred, budget.log_uniform))

        record = sandbox.execute(spec, sample_params(rng, spec, budget.log_uniform))
        point = to_datapoint(record)
        if point is not None:
            points.append(point)

    logger.info("Collected %d points for %s (%d attempts)", len(points), spec.id, attempts)
    return points


def collect_initial(world: World, specs: Sequence[ActionSpec], raw: dict[str, list[str]],
                    budget: SampleBudget, targets: Iterable[str] | None = None) -> dict[str, list[DataPoint]]:
    """Collect `budget.initial_per_action` points for every approximated action.

    `specs` is the full candidate list (used for producers and predecessors);
    `targets` restricts which actions are sampled.
    """
    wanted = set(targets) if targets is not None else {s.id for s in specs if s.approximate}
    out: dict[str, list[DataPoint]] = {}
    for spec in specs:
        if spec.id in wanted:
            out[spec.id] = collect_for_action(world, spec, specs, raw.get(spec.id, []), budget)
    return out
