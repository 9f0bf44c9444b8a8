"""
Vectorsmith – Parameter search for one symbolic vector.

construct() turns a vector plus surrogates into a maximization problem:
objective = estimated USD profit, constraints = every tracked state and every
adversary balance stays non-negative after every step (plus "does not revert"
for steps executed on the simulator).

solve() samples the unit box with scrambled Sobol sequences, once mapped
linearly and once log-scaled on ranges spanning orders of magnitude, then
polishes the best starts with bounded Nelder-Mead in the mapping each start
came from. Constraint violations are charged as an exact penalty whose
weight grows tenfold each refinement round.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from app.exceptions import NoFeasiblePoint
from app.models.actions import SymbolicVector
from app.services.approximator import ActionSurrogates, Trajectory, VectorEstimator
from app.services.world import World

logger = logging.getLogger(__name__)

LOG_SCALE_RATIO = 100


@dataclass(frozen=True)
class StrengthLevel:
    level: int
    points_per_dim: int
    refinement_iterations: int
    local_polish_budget: int


DEFAULT_STRENGTHS: dict[int, StrengthLevel] = {
    1: StrengthLevel(1, 64, 2, 60),
    2: StrengthLevel(2, 256, 4, 200),
    3: StrengthLevel(3, 1024, 8, 600),
}


@dataclass
class OptimizationProblem:
    bounds: list[tuple[float, float]]
    objective: Callable[[Sequence[float]], float]
    constraints: list[Callable[[Sequence[float]], float]]
    evaluate: Callable[[Sequence[float]], tuple[float, np.ndarray]] | None = None
    constraint_scales: np.ndarray | None = None
    integral: bool = False
    value_scale: float = 1.0
    labels: list[str] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def evaluate_point(self, x: Sequence[float]) -> tuple[float, np.ndarray]:
        if self.evaluate is not None:
            return self.evaluate(x)
        return float(self.objective(x)), np.array([c(x) for c in self.constraints], dtype=float)


@dataclass
class OptResult:
    best_params: tuple
    best_estimated_profit: Fraction
    feasible: bool
    evaluations: int
    feasible_rate: float = 0.0
    positive_rate: float = 0.0


# ── Construction ──────────────────────────────────────────────

class _TrajectoryCache:
    """Memoizes the last estimate so objective and constraints share one run."""

    def __init__(self, estimator: VectorEstimator, vector: SymbolicVector):
        self.estimator = estimator
        self.vector = vector
        self._key = None
        self._value: Trajectory | None = None

    def __call__(self, flat: Sequence[float]) -> Trajectory:
        key = tuple(int(v) for v in flat)
        if key != self._key:
            self._value = self.estimator.run(self.vector.split(key))
            self._key = key
        return self._value


def _residuals(traj: Trajectory, n_steps: int, exact_steps: Sequence[bool]) -> np.ndarray:
    rows = []
    last_s, last_b = traj.initial_states, traj.initial_balances
    for k in range(n_steps):
        if k < len(traj.states):
            last_s, last_b = traj.states[k], traj.balances[k]
        rows.append(last_s)
        rows.append(last_b)
    flags = []
    for k, is_exact in enumerate(exact_steps):
        if is_exact:
            flags.append(-1.0 if traj.reverted_at is not None and traj.reverted_at <= k else 0.0)
    return np.concatenate(rows + [np.array(flags, dtype=float)])


def construct(vector: SymbolicVector, surrogates: Mapping[str, ActionSurrogates], world: World,
              exact_ids: Iterable[str] = ()) -> OptimizationProblem:
    estimator = VectorEstimator(vector, surrogates, world, exact_ids)
    cache = _TrajectoryCache(estimator, vector)
    n = len(vector)

    def evaluate(x):
        traj = cache(x)
        return traj.profit, _residuals(traj, n, estimator.exact)

    def objective(x):
        return cache(x).profit

    labels, scales = [], []
    consumed_upper = {t: 0 for t in estimator.tokens}
    for spec in vector:
        for t in spec.tokens_in:
            consumed_upper[t] = max(consumed_upper[t], max((p.upper for p in spec.params), default=0))
    for k in range(n):
        for r, v in zip(estimator.refs, estimator.initial_states):
            labels.append(f"step{k}:{r}")
            scales.append(max(1.0, abs(v)))
        for t, v in zip(estimator.tokens, estimator.initial_balances):
            labels.append(f"step{k}:balance:{t}")
            scales.append(max(1.0, abs(v), float(consumed_upper[t])))
    for k, is_exact in enumerate(estimator.exact):
        if is_exact:
            labels.append(f"step{k}:no-revert")
            scales.append(1.0)

    def make_constraint(i):
        return lambda x: float(evaluate(x)[1][i])

    constraints = [make_constraint(i) for i in range(len(labels))]
    value_scale = sum(
        float(world.state.price_of(t)) * v / world.state.token(t).unit
        for t, v in zip(estimator.tokens, estimator.initial_balances)
    )
    bounds = [(float(p.lower), float(p.upper)) for spec in vector for p in spec.params]
    return OptimizationProblem(bounds, objective, constraints, evaluate, np.array(scales),
                               integral=True, value_scale=max(value_scale, 1.0), labels=labels)


# ── Search ────────────────────────────────────────────────────

class _Box:
    """Maps the unit cube onto the parameter box, linearly or log-scaled on wide positive ranges."""

    def __init__(self, bounds: Sequence[tuple[float, float]], integral: bool):
        self.lo = np.array([b[0] for b in bounds], dtype=float)
        self.hi = np.array([b[1] for b in bounds], dtype=float)
        self.wide = (self.lo > 0) & (self.hi >= LOG_SCALE_RATIO * np.where(self.lo > 0, self.lo, 1))
        self.integral = integral

    def to_params(self, u: np.ndarray, log_scale: bool = False) -> tuple:
        u = np.clip(u, 0.0, 1.0)
        x = self.lo + u * (self.hi - self.lo)
        if log_scale:
            safe_lo = np.log(np.where(self.lo > 0, self.lo, 1))
            logv = np.exp(safe_lo + u * (np.log(np.where(self.hi > 0, self.hi, 1)) - safe_lo))
            x = np.where(self.wide, logv, x)
        if self.integral:
            return tuple(int(min(max(round(v), lo), hi)) for v, lo, hi in zip(x, self.lo, self.hi))
        return tuple(float(min(max(v, lo), hi)) for v, lo, hi in zip(x, self.lo, self.hi))

    def to_unit(self, x: Sequence[float], log_scale: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        u = (x - self.lo) / span
        if log_scale:
            safe_lo = np.where(self.lo > 0, self.lo, 1)
            logspan = np.log(np.where(self.hi > 0, self.hi, 1)) - np.log(safe_lo)
            logspan = np.where(logspan > 0, logspan, 1.0)
            logu = (np.log(np.maximum(x, safe_lo)) - np.log(safe_lo)) / logspan
            u = np.where(self.wide, logu, u)
        return np.clip(u, 0.0, 1.0)


@dataclass
class _Evaluated:
    params: tuple
    objective: float
    violation: float
    log_scale: bool = False


def _sobol(dim: int, count: int, seed: int) -> list[np.ndarray]:
    sobol = qmc.Sobol(d=dim, scramble=True, seed=seed)
    return list(sobol.random_base2(m=max(math.ceil(math.log2(max(count, 1))), 0)))


def solve(problem: OptimizationProblem, strength: StrengthLevel, seed: int = 0,
          warm_starts: Iterable[Sequence[float]] = (), tolerance: float = 1e-9) -> OptResult:
    if any(not (math.isfinite(lo) and math.isfinite(hi)) for lo, hi in problem.bounds):
        raise ValueError("solve needs finite bounds")
    box = _Box(problem.bounds, problem.integral)
    scales = problem.constraint_scales
    seen: dict[tuple, _Evaluated] = {}

    def assess(params: tuple, log_scale: bool = False) -> _Evaluated:
        hit = seen.get(params)
        if hit is None:
            obj, res = problem.evaluate_point(params)
            res = np.asarray(res, dtype=float)
            if scales is not None and len(res):
                res = res / scales
            viol = float(np.sum(np.maximum(-res, 0.0))) if len(res) else 0.0
            if not math.isfinite(obj):
                obj, viol = -math.inf, math.inf
            hit = _Evaluated(params, obj, viol if viol > tolerance else 0.0, log_scale)
            seen[params] = hit
        return hit

    def penalized(e: _Evaluated, weight: float) -> float:
        return e.objective - weight * e.violation * problem.value_scale

    # Global sampling: a linear batch, plus a smaller log-scaled batch when some
    # range spans orders of magnitude, so small amounts are covered as well.
    n_init = max(strength.points_per_dim * problem.dim, 1)
    initial = [assess(box.to_params(u)) for u in _sobol(problem.dim, n_init, seed)]
    if box.wide.any():
        initial += [assess(box.to_params(u, True), True) for u in _sobol(problem.dim, n_init // 2, seed + 1)]
    extra = [box.to_unit(w) for w in warm_starts] + [np.full(problem.dim, 0.5), np.ones(problem.dim)]
    initial += [assess(box.to_params(u)) for u in extra]
    feasible_init = [e for e in initial if e.violation == 0.0]
    feasible_rate = len(feasible_init) / len(initial)
    positive_rate = sum(1 for e in feasible_init if e.objective > 0) / len(initial)

    # Local refinement, each start polished in the mapping it was drawn from.
    weight = 1.0
    polished: set[tuple] = set()
    for _ in range(strength.refinement_iterations):
        ranked = sorted(seen.values(), key=lambda e: (-penalized(e, weight), e.params))
        starts = [e for e in ranked if e.params not in polished][:2]
        for start in starts:
            polished.add(start.params)
            scaled = start.log_scale
            x0 = box.to_unit(start.params, scaled)
            w = weight
            minimize(lambda u: -penalized(assess(box.to_params(u, scaled), scaled), w), x0,
                     method="Nelder-Mead", bounds=[(0.0, 1.0)] * problem.dim,
                     options={"maxfev": strength.local_polish_budget, "xatol": 1e-8, "fatol": 1e-12})
        weight *= 10.0

    feasible = [e for e in seen.values() if e.violation == 0.0]
    if not feasible:
        raise NoFeasiblePoint(f"all {len(seen)} evaluated points violate the constraints")
    best = max(feasible, key=lambda e: (e.objective, tuple(-v for v in e.params)))
    # Report a fresh evaluation at the chosen point.
    value, _ = problem.evaluate_point(best.params)
    logger.debug("Solved at strength %d: %.4f after %d evaluations", strength.level, value, len(seen))
    return OptResult(best.params, Fraction(value), True, len(seen), feasible_rate, positive_rate)
