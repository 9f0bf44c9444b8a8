from fractions import Fraction

import numpy as np
import pytest
import yaml

from app.exceptions import NoFeasiblePoint
from app.models.actions import AttackStatus, AttackVector, SymbolicVector
from app.services.benchmarks import BUNDLED_DIR, load_benchmark
from app.services.optimizer import DEFAULT_STRENGTHS, OptimizationProblem, construct, solve
from app.services.synthesizer import validate


def test_unconstrained_parabola_at_lowest_strength():
    problem = OptimizationProblem(bounds=[(0.0, 10.0)], objective=lambda x: -(x[0] - 3.0) ** 2,
                                  constraints=[])
    result = solve(problem, DEFAULT_STRENGTHS[1], seed=0)
    assert result.feasible
    assert abs(result.best_params[0] - 3.0) < 0.01
    assert result.evaluations > DEFAULT_STRENGTHS[1].points_per_dim


def test_linear_objective_hits_active_constraint():
    problem = OptimizationProblem(
        bounds=[(0.0, 10.0), (0.0, 10.0)],
        objective=lambda x: x[0] + x[1],
        constraints=[lambda x: 6.0 - x[0] - x[1]],
    )
    result = solve(problem, DEFAULT_STRENGTHS[2], seed=1)
    total = result.best_params[0] + result.best_params[1]
    assert 6.0 - 0.01 <= total <= 6.0 + 1e-9
    assert 0.0 < result.feasible_rate < 1.0


def test_integral_problem_returns_ints():
    problem = OptimizationProblem(bounds=[(1.0, 1_000_000.0)], objective=lambda x: -abs(x[0] - 4321),
                                  constraints=[], integral=True)
    result = solve(problem, DEFAULT_STRENGTHS[1], seed=0)
    assert isinstance(result.best_params[0], int)
    assert abs(result.best_params[0] - 4321) <= 50


def test_infeasible_problem_raises():
    problem = OptimizationProblem(bounds=[(0.0, 1.0)], objective=lambda x: x[0],
                                  constraints=[lambda x: -1.0])
    with pytest.raises(NoFeasiblePoint):
        solve(problem, DEFAULT_STRENGTHS[1])


def test_same_seed_same_answer():
    problem = OptimizationProblem(bounds=[(0.0, 5.0), (0.0, 5.0)],
                                  objective=lambda x: -np.hypot(x[0] - 1, x[1] - 4), constraints=[])
    a = solve(problem, DEFAULT_STRENGTHS[1], seed=9)
    b = solve(problem, DEFAULT_STRENGTHS[1], seed=9)
    assert a.best_params == b.best_params
    assert a.best_estimated_profit == b.best_estimated_profit


def test_construct_on_exact_vector_matches_execution(warp):
    """With every step executed exactly, the estimate is the real profit."""
    vector = SymbolicVector((warp.spec("swap_dai_weth"), warp.spec("swap_weth_dai")))
    problem = construct(vector, {}, warp.world, exact_ids=[s.id for s in vector])
    assert problem.integral
    assert problem.dim == 2

    params = (1_000 * 10**18, 10**17)
    value, residuals = problem.evaluate_point(params)
    run = warp.world.run_vector(list(zip(vector, [(params[0],), (params[1],)])))
    assert value == pytest.approx(float(run.profit.usd_profit), rel=1e-6)
    assert np.all(residuals >= 0)


def test_construct_flags_reverting_exact_steps(warp):
    vector = SymbolicVector((warp.spec("borrow_usdc"),))
    problem = construct(vector, {}, warp.world, exact_ids=[vector.ids[0]])
    _, residuals = problem.evaluate_point((1_000 * 10**6,))
    # No collateral: the borrow reverts, which shows up as a negative residual.
    assert residuals[-1] == -1.0


# ── Harvest ──────────────────────────────────────────────────

def _harvest_exact_problem(harvest):
    vector = SymbolicVector(tuple(spec for spec, _ in harvest.ground_truth_steps()))
    return vector, construct(vector, {}, harvest.world, exact_ids=vector.ids)


def test_harvest_vector_has_one_parameter_per_step_and_step_constraints(harvest):
    vector, problem = _harvest_exact_problem(harvest)
    assert problem.dim == 4
    assert len(problem.constraints) >= 2 * len(vector)
    assert len(problem.labels) == len(problem.constraints) == len(problem.constraint_scales)
    assert sum(label.endswith("no-revert") for label in problem.labels) == 4


def test_exact_search_recovers_the_harvest_attack(harvest):
    vector, problem = _harvest_exact_problem(harvest)
    result = solve(problem, DEFAULT_STRENGTHS[2], seed=0)
    assert result.best_estimated_profit >= Fraction(9, 10) * harvest.ground_truth_profit
    run = harvest.world.run_vector(list(zip(vector, vector.split(result.best_params))))
    assert not run.reverted
    assert run.profit.usd_profit > 0


def test_capital_bounds_the_balance_constraint(tmp_path):
    doc = yaml.safe_load((BUNDLED_DIR / "harvest.yml").read_text(encoding="utf-8"))
    doc["adversary"]["capital"]["USDC"] = "100e6"
    del doc["ground_truth"]
    path = tmp_path / "small.yml"
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    bench = load_benchmark(path)

    spec = bench.spec("exchange_usdc_usdt")
    assert spec.params[0].upper == 100 * 10**6
    problem = construct(SymbolicVector((spec,)), {}, bench.world, exact_ids=[spec.id])
    _, residuals = problem.evaluate_point((40 * 10**6,))
    assert residuals[problem.labels.index("step0:balance:USDC")] == 60 * 10**6


def _feasible(problem, params, tolerance=1e-9) -> tuple[bool, float]:
    value, residuals = problem.evaluate_point(params)
    scaled = np.asarray(residuals, dtype=float) / problem.constraint_scales
    return bool(np.all(scaled >= -tolerance)), value


@pytest.mark.slow
def test_strength_three_against_grid_search(harvest):
    """Deposit and withdraw amounts around fixed pool swaps, searched both ways."""
    _, full = _harvest_exact_problem(harvest)
    swap_in, _, swap_out, _ = (p[0] for _, p in harvest.ground_truth_steps())
    bounds = [full.bounds[1], full.bounds[3]]

    def evaluate(x):
        return full.evaluate_point((swap_in, int(x[0]), swap_out, int(x[1])))

    sliced = OptimizationProblem(bounds, objective=lambda x: evaluate(x)[0], constraints=[],
                                 evaluate=evaluate, constraint_scales=full.constraint_scales,
                                 integral=True, value_scale=full.value_scale)
    grid_best = -np.inf
    for a in np.linspace(*bounds[0], 50):
        for b in np.linspace(*bounds[1], 50):
            ok, value = _feasible(sliced, (int(a), int(b)))
            if ok:
                grid_best = max(grid_best, value)
    assert grid_best > 0

    result = solve(sliced, DEFAULT_STRENGTHS[3], seed=0)
    assert float(result.best_estimated_profit) >= 0.9 * grid_best


@pytest.mark.slow
def test_exact_search_on_the_warp_vector_validates(warp):
    vector = SymbolicVector(tuple(spec for spec, _ in warp.ground_truth_steps()))
    problem = construct(vector, {}, warp.world, exact_ids=vector.ids)
    result = solve(problem, DEFAULT_STRENGTHS[3], seed=0)
    steps = list(zip(vector, vector.split(result.best_params)))
    attack = validate(warp.world, AttackVector(steps, result.best_estimated_profit), 0.05)
    assert attack.status is AttackStatus.VALIDATED
    assert attack.actual_profit > 0
