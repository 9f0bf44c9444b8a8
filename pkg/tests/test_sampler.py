import random

import pytest

from app.exceptions import BudgetExhausted
from app.models.actions import ActionSpec, SymbolicParam, read_states
from app.models.datapoint import SampleBudget, dump_points, load_points
from app.services.sampler import (
    collect_for_action, collect_initial, raw_dependencies_from_specs, sample_param,
)
from app.services.world import token_delta_of


def test_raw_dependencies_from_harvest_specs(harvest):
    deps = raw_dependencies_from_specs(harvest.specs)
    assert deps["exchange_usdt_usdc"] == ["exchange_usdt_usdc", "exchange_usdc_usdt"]
    # Exchanges move the oracle-priced `invested`, which deposits read.
    assert deps["deposit"] == ["exchange_usdt_usdc", "exchange_usdc_usdt", "deposit", "withdraw"]


def test_sample_param_stays_in_bounds():
    rng = random.Random(0)
    param = SymbolicParam("x", 10, 10**9)
    for log_uniform in (False, True):
        values = [sample_param(rng, param, log_uniform) for _ in range(500)]
        assert all(10 <= v <= 10**9 for v in values)
    # Log-uniform sampling favours small magnitudes.
    small = sum(1 for _ in range(500) if sample_param(rng, param, True) < 10**7)
    assert small > 100


def test_withdraw_samples_need_a_producer(harvest):
    budget = SampleBudget(initial_per_action=20, seed=3)
    spec = harvest.spec("withdraw")
    points = collect_for_action(harvest.world, spec, harvest.specs, [], budget)
    assert len(points) == 20
    for p in points:
        assert len(p.prestates) == 3 and len(p.params) == 1
        assert len(p.poststates) == 2 and len(p.token_deltas) == 2
        # fUSDC goes in, USDC comes out.
        assert p.token_deltas[0] == -p.params[0]
        assert p.token_deltas[1] > 0


def test_collection_is_deterministic(harvest):
    budget = SampleBudget(initial_per_action=15, seed=5)
    first = collect_initial(harvest.world, harvest.specs, raw_dependencies_from_specs(harvest.specs), budget)
    second = collect_initial(harvest.world, harvest.specs, raw_dependencies_from_specs(harvest.specs), budget)
    assert first == second
    assert sorted(first) == sorted(s.id for s in harvest.specs)


def test_collection_skips_exact_actions(warp):
    budget = SampleBudget(initial_per_action=5, seed=0, max_attempt_factor=50)
    points = collect_initial(warp.world, warp.specs, raw_dependencies_from_specs(warp.specs), budget)
    assert set(points) == {"provide_collateral"}
    # LP tokens come from the exact mint_balanced producer.
    assert all(p.token_deltas == (-p.params[0],) for p in points["provide_collateral"])


def test_always_reverting_action_exhausts_budget(harvest):
    spec = ActionSpec.build(id="rebalance", target="vault.rebalance")
    budget = SampleBudget(initial_per_action=3, max_attempt_factor=2)
    with pytest.raises(BudgetExhausted, match="0/3"):
        collect_for_action(harvest.world, spec, harvest.specs, [], budget)


def test_points_file_keeps_every_point(harvest, tmp_path):
    budget = SampleBudget(initial_per_action=4, seed=1)
    points = collect_initial(harvest.world, harvest.specs, {}, budget, targets=["deposit"])
    path = tmp_path / "points.jsonl"
    dump_points(points, path)
    assert len(path.read_text().splitlines()) == 4
    assert load_points(path) == points


def test_read_states_and_token_deltas(harvest_world, harvest):
    spec = harvest.spec("exchange_usdt_usdc")
    assert read_states(spec, harvest_world) == (100_000_000 * 10**6, 100_000_000 * 10**6)
    record = harvest_world.execute(spec, (10**9,))
    usdt, usdc = token_delta_of(record)
    assert usdt == -10**9
    assert 0 < usdc < 10**9
    assert read_states(spec, harvest_world) == (100_000_000 * 10**6 - usdc, 100_000_000 * 10**6 + 10**9)


def test_token_delta_of_reverted_record(harvest_world, harvest):
    record = harvest_world.execute(harvest.spec("withdraw"), (10**6,))
    assert record.reverted
    assert token_delta_of(record) is None
