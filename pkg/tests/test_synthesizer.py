from fractions import Fraction

import pytest

from tests.conftest import FIXTURES

from app.config import SynthesisDefaults
from app.models.actions import ActionSpec, AttackStatus, AttackVector, SymbolicVector
from app.models.datapoint import DataPoint
from app.services.approximator import Method, VectorEstimator, fit_action
from app.services.benchmarks import load_benchmark
from app.services.report import normalized_profit
from app.services.sampler import to_datapoint
from app.services.synthesizer import (
    SynthesisConfig, TokenFlowGraph, cegdc, enumerate_vectors, is_counterexample, is_feasible, prune, run,
    validate,
)

E6 = 10**6


# ── Enumeration and pruning ──────────────────────────────────

def test_enumeration_counts(harvest):
    assert len(enumerate_vectors(harvest.specs[:2], 2)) == 2 + 4
    assert len(enumerate_vectors(harvest.specs, 4)) == 4 + 16 + 64 + 256
    with pytest.raises(ValueError):
        enumerate_vectors(harvest.specs, 0)


def test_pruning_statistics_on_harvest(harvest):
    graph = TokenFlowGraph.from_world(harvest.world)
    assert graph.initial_tokens == {"USDC", "USDT"}
    kept, stats = prune(enumerate_vectors(harvest.specs, 4), graph, max_repeat=2)
    assert stats.to_dict() == {"enumerated": 340, "after_h1": 160, "after_h2": 160, "after_h3": 84}
    assert len(kept) == 84
    ids = {v.ids for v in kept}
    assert ("exchange_usdt_usdc", "deposit", "exchange_usdc_usdt", "withdraw") in ids
    # Shares only exist after a deposit.
    assert all(v.ids.index("withdraw") > v.ids.index("deposit") for v in kept if "withdraw" in v.ids)


def _spec(id, tokens_in=(), tokens_out=()):
    return ActionSpec.build(id=id, target=f"p.{id}", tokens_in=tokens_in, tokens_out=tokens_out)


@pytest.mark.parametrize("ids, max_repeat, feasible", [
    (("buy", "sell"), None, True),
    (("buy", "buy"), None, False),                    # adjacent duplicate
    (("buy", "sell", "buy", "sell"), None, True),     # each twice, cap ceil(4/2)
    (("buy", "sell", "buy", "sell"), 1, False),
    (("sell",), None, False),                         # needs B first
    (("mint", "sell"), None, True),
])
def test_is_feasible(ids, max_repeat, feasible):
    specs = {
        "buy": _spec("buy", ["A"], ["B"]),
        "sell": _spec("sell", ["B"], ["A"]),
        "mint": _spec("mint", [], ["B"]),
    }
    graph = TokenFlowGraph(frozenset({"A"}))
    vector = SymbolicVector(tuple(specs[i] for i in ids))
    assert is_feasible(vector, graph, max_repeat) is feasible


def test_default_repeat_cap_agrees_with_the_length_bound(harvest):
    graph = TokenFlowGraph.from_world(harvest.world)
    for vector in enumerate_vectors(harvest.specs, 4):
        # Without adjacent repeats no id can occur more than ceil(len/2) <= ceil(4/2) times.
        assert is_feasible(vector, graph) is is_feasible(vector, graph, max_repeat=2)


# ── Counterexamples ──────────────────────────────────────────

@pytest.mark.parametrize("estimated, actual, expected", [
    (100, 100, False),
    (100, 50, True),
    (0, 0, False),
    (100, 96, False),
    (100, 90, True),
    (-10, 10, True),
])
def test_counterexample_predicate(estimated, actual, expected):
    assert is_counterexample(estimated, actual, 0.05) is expected
    assert is_counterexample(actual, estimated, 0.05) is expected


def test_counterexample_predicate_is_exact_at_the_threshold():
    # gap 10 against 0.05 * 200 = 10: on the boundary counts as a counterexample.
    assert is_counterexample(Fraction(105), Fraction(95), 0.05)


def test_validate_ground_truth(harvest):
    steps = harvest.ground_truth_steps()
    attack = validate(harvest.world, AttackVector(steps, harvest.ground_truth_profit), 0.05)
    assert attack.status is AttackStatus.VALIDATED
    assert attack.actual_profit == harvest.ground_truth_profit
    assert attack.executed_prefix == 4


def test_validate_flags_overestimates(harvest):
    steps = harvest.ground_truth_steps()
    attack = validate(harvest.world, AttackVector(steps, harvest.ground_truth_profit * 3), 0.05)
    assert attack.status is AttackStatus.COUNTEREXAMPLE


def test_validate_reports_reverts(harvest):
    steps = [(harvest.spec("withdraw"), (E6,))]
    attack = validate(harvest.world, AttackVector(steps, Fraction(10)), 0.05)
    assert attack.status is AttackStatus.REVERTED
    assert attack.executed_prefix == 0
    assert attack.actual_profit == 0
    assert "fUSDC" in attack.revert_reason


# ── Counterexample-guided collection ─────────────────────────

def _blind_surrogates(spec):
    """A 1-NN store that predicts all-zero outputs everywhere."""
    zero = DataPoint((1, 1), (1,), (0,) * len(spec.poststates), (0,) * len(spec.flow_tokens))
    return fit_action(spec, [zero], Method.INTER)


def test_cegdc_single_bad_step(harvest):
    spec = harvest.spec("exchange_usdt_usdc")
    vector = SymbolicVector((spec,))
    estimator = VectorEstimator(vector, {spec.id: _blind_surrogates(spec)}, harvest.world)
    attack = AttackVector([(spec, (5_000_000 * E6,))], Fraction(0))

    new = cegdc(attack, harvest.world, estimator, 0.05)
    assert list(new) == [spec.id]
    (point,) = new[spec.id]
    assert point.prestates == (100_000_000 * E6, 100_000_000 * E6)
    assert point.params == (5_000_000 * E6,)
    assert point.token_deltas[0] == -5_000_000 * E6


def test_cegdc_walks_back_over_every_bad_step(harvest):
    a, b = harvest.spec("exchange_usdt_usdc"), harvest.spec("exchange_usdc_usdt")
    vector = SymbolicVector((a, b))
    estimator = VectorEstimator(vector, {a.id: _blind_surrogates(a), b.id: _blind_surrogates(b)},
                                harvest.world)
    attack = AttackVector([(a, (E6,)), (b, (2 * E6,))], Fraction(0))

    new = cegdc(attack, harvest.world, estimator, 0.05)
    assert sorted(new) == sorted([a.id, b.id])
    assert len(new[a.id]) == len(new[b.id]) == 1
    # The second point starts from the state the first exchange left behind.
    assert new[b.id][0].prestates != new[a.id][0].prestates


def test_cegdc_stops_at_an_accurate_prefix(harvest):
    a, b = harvest.spec("exchange_usdt_usdc"), harvest.spec("exchange_usdc_usdt")
    vector = SymbolicVector((a, b))
    # The first step runs exactly, so its estimate matches execution.
    estimator = VectorEstimator(vector, {b.id: _blind_surrogates(b)}, harvest.world, exact_ids=[a.id])
    attack = AttackVector([(a, (E6,)), (b, (2 * E6,))], Fraction(0))

    new = cegdc(attack, harvest.world, estimator, 0.05)
    assert list(new) == [b.id]


# ── Configuration ────────────────────────────────────────────

def test_config_from_defaults_applies_overrides():
    config = SynthesisConfig.from_defaults(SynthesisDefaults(), max_length=5, method="inter", epsilon=None)
    assert config.max_length == 5
    assert config.method is Method.INTER
    assert config.epsilon == 0.05
    assert config.repeat_cap == 3
    assert config.strength_for(0).level == 1
    assert config.strength_for(7).level == 3


def test_config_rejects_unknown_strength():
    with pytest.raises(ValueError):
        SynthesisConfig(strengths=[4])


def test_cegdc_refines_a_step_whose_states_already_agree(harvest):
    spec = harvest.spec("exchange_usdt_usdc")
    rec = harvest.fresh_world().execute(spec, (5_000_000 * E6,))
    # Trained on the very point being replayed: every state matches execution.
    estimator = VectorEstimator(SymbolicVector((spec,)),
                                {spec.id: fit_action(spec, [to_datapoint(rec)], Method.INTER)}, harvest.world)
    attack = AttackVector([(spec, (5_000_000 * E6,))], Fraction(10**9))

    new = cegdc(attack, harvest.world, estimator, 0.05)
    assert [p.params for p in new[spec.id]] == [(5_000_000 * E6,)]


# ── Pruning soundness ────────────────────────────────────────

def test_pruned_vectors_are_unprofitable_on_a_coarse_grid(harvest):
    graph = TokenFlowGraph.from_world(harvest.world)
    everything = enumerate_vectors(harvest.specs, 4)
    kept, _ = prune(everything, graph, max_repeat=2)
    kept_ids = {v.ids for v in kept}
    removed = [v for v in everything if v.ids not in kept_ids]

    evaluations = 0
    for vector in removed:
        for share in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
            steps = [(spec, tuple(int(p.upper * share) for p in spec.params)) for spec in vector]
            run_ = harvest.world.run_vector(steps)
            evaluations += 1
            assert run_.reverted or run_.profit.usd_profit <= 0, (vector.ids, share)
    assert 0 < evaluations <= 1000


# ── Counterexample-guided collection on and off ──────────────

MISPRICED = FIXTURES / "benchmarks" / "mispriced.yml"


@pytest.fixture(scope="module")
def mispriced():
    return load_benchmark(MISPRICED)


def _one_point(bench):
    """A single sample far from the cheapest profitable trade."""
    spec = bench.spec("swap_usdc_weth")
    return {spec.id: [to_datapoint(bench.fresh_world().execute(spec, (300_000 * E6,)))]}


def _sparse_run(bench, with_cegdc: bool):
    config = SynthesisConfig(max_length=1, max_iterations=6, strengths=[1], method="inter",
                             cegdc=with_cegdc, seed=3)
    return run(config, bench, points=_one_point(bench))


def _best_normalized(result, bench) -> float:
    if not result.attacks:
        return 0.0
    return normalized_profit(result.attacks[0].actual_profit, bench.ground_truth_profit)


def test_sparse_start_is_solved_only_with_counterexample_data(mispriced):
    guided = _sparse_run(mispriced, with_cegdc=True)
    blind = _sparse_run(mispriced, with_cegdc=False)

    # One stored sample predicts the same profit everywhere, so the
    # cheapest trade always wins and never matches execution.
    assert blind.attacks == []
    assert blind.counterexamples >= 1
    assert blind.tdp == blind.idp

    assert guided.attacks
    best = guided.attacks[0]
    assert best.status is AttackStatus.VALIDATED
    assert best.actual_profit > 0
    assert guided.counterexamples >= 1
    assert guided.tdp["swap_usdc_weth"] > guided.idp["swap_usdc_weth"] == 1
    assert _best_normalized(guided, mispriced) >= _best_normalized(blind, mispriced)


@pytest.mark.slow
def test_counterexample_data_grows_the_harvest_store(harvest):
    config = SynthesisConfig(max_iterations=2, strengths=[1], initial_points=60, seed=7)
    guided = run(config, harvest)
    blind = run(config.model_copy(update={"cegdc": False}), harvest)
    assert blind.tdp == blind.idp
    assert guided.counterexamples >= 1
    assert sum(guided.tdp.values()) > sum(guided.idp.values())


# ── Control ──────────────────────────────────────────────────

@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_control_never_yields_a_vector(control, seed):
    config = SynthesisConfig(max_iterations=2, strengths=[1], initial_points=60, seed=seed)
    result = run(config, control)
    assert result.attacks == []
