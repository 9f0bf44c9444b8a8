import numpy as np
import pytest

from app.exceptions import InsufficientData, MissingSurrogate
from app.models.actions import SymbolicVector
from app.models.datapoint import DataPoint
from app.services.approximator import (
    Method, SurrogateModel, VectorEstimator, estimate_action, fit_action, fit_nearest, fit_nearest_arrays,
    fit_polynomial, fit_polynomial_arrays, monomial_exponents, predict,
)


def _quadratic(X: np.ndarray) -> np.ndarray:
    x0, x1 = X[:, 0], X[:, 1]
    return 3 + 2 * x0 - x1 + 0.5 * x0**2 + 0.25 * x0 * x1 - x1**2


def test_monomial_count():
    assert len(monomial_exponents(2, 2)) == 6
    assert len(monomial_exponents(3, 3)) == 20
    assert monomial_exponents(2, 1).tolist() == [[0, 0], [1, 0], [0, 1]]


def test_quadratic_fit_reproduces_held_out_points():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1_000, size=(60, 2))
    model = fit_polynomial_arrays(X, _quadratic(X), degree=2)
    assert not model.rank_deficient

    X_test = rng.uniform(0, 1_000, size=(200, 2))
    expected = _quadratic(X_test)
    got = model.evaluate(X_test)
    assert np.all(np.abs(got - expected) <= 1e-6 * np.maximum(1.0, np.abs(expected)))


def test_polynomial_fit_needs_enough_points():
    X = np.arange(10, dtype=float).reshape(5, 2)
    with pytest.raises(InsufficientData):
        fit_polynomial_arrays(X, X[:, 0], degree=2)


def test_duplicate_points_give_a_rank_deficient_fit():
    X = np.tile([[1.0, 2.0]], (10, 1))
    model = fit_polynomial_arrays(X, np.full(10, 5.0), degree=1)
    assert model.rank_deficient
    assert model.evaluate(np.array([[1.0, 2.0]]))[0] == pytest.approx(5.0)


def test_nearest_is_exact_on_training_inputs():
    rng = np.random.default_rng(1)
    X = rng.uniform(-50, 50, size=(300, 3))
    y = rng.normal(size=300)
    model = fit_nearest_arrays(X, y)
    assert np.array_equal(model.evaluate(X), y)


def test_nearest_matches_exhaustive_scan():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, [1, 1_000, 10**6], size=(400, 3))
    y = rng.normal(size=400)
    model = fit_nearest_arrays(X, y)

    queries = rng.uniform(0, [1, 1_000, 10**6], size=(1_000, 3))
    span = X.max(axis=0) - X.min(axis=0)
    dist = (((queries[:, None, :] - X[None, :, :]) / span) ** 2).sum(axis=2)
    assert np.array_equal(model.evaluate(queries), y[dist.argmin(axis=1)])


def test_extrapolation_distance():
    X = np.array([[0.0, 0.0], [10.0, 10.0]])
    model = fit_nearest_arrays(X, np.array([0.0, 1.0]))
    assert model.extrapolation(np.array([5.0, 5.0])) == 0.0
    assert model.extrapolation(np.array([20.0, 5.0])) == pytest.approx(1.0)


@pytest.mark.parametrize("method", [Method.POLY, Method.INTER])
def test_model_dict_round_trip_predicts_the_same(method):
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 10, size=(30, 2))
    model = (fit_polynomial_arrays(X, _quadratic(X)) if method is Method.POLY
             else fit_nearest_arrays(X, _quadratic(X)))
    restored = SurrogateModel.from_dict(model.to_dict())
    assert np.allclose(restored.evaluate(X), model.evaluate(X))


def _linear_points():
    """Points for a fake exchange that moves dx one-for-one."""
    points = []
    for a in range(5):
        for b in range(5):
            x0, x1 = 10**12 + 10**9 * a, 10**12 + 10**9 * b
            dx = 10**6 * (1 + (a * b) % 4)
            points.append(DataPoint((x0, x1), (dx,), (x0 - dx, x1 + dx, 10**12 - dx), (-dx, dx)))
    return points


def test_fit_action_fits_every_output(harvest):
    spec = harvest.spec("exchange_usdc_usdt")
    surrogates = fit_action(spec, _linear_points(), Method.POLY, degree=1)
    assert len(surrogates.models) == len(spec.output_names)
    post = surrogates.predict_all([10**12, 10**12, 5 * 10**6])
    assert post[0] == pytest.approx(10**12 - 5 * 10**6, rel=1e-9)
    assert post[3] == pytest.approx(-5 * 10**6, rel=1e-6)
    with pytest.raises(ValueError):
        fit_action(spec, _linear_points(), Method.EXACT)


def test_estimator_composes_surrogates(harvest):
    spec = harvest.spec("exchange_usdc_usdt")
    surrogates = {spec.id: fit_action(spec, _linear_points(), Method.POLY, degree=1)}
    estimator = VectorEstimator(SymbolicVector((spec, spec)), surrogates, harvest.world)
    traj = estimator.run([(10**6,), (2 * 10**6,)])
    assert traj.reverted_at is None
    assert len(traj.states) == 2
    # USDC out, USDT in at one-for-one: zero profit at equal prices.
    assert traj.profit == pytest.approx(0.0, abs=1e-3)
    usdc = estimator.tokens.index("USDC")
    assert traj.balances[-1][usdc] == pytest.approx(estimator.initial_balances[usdc] - 3 * 10**6, rel=1e-9)


def test_estimator_requires_surrogates_for_approximated_steps(harvest):
    with pytest.raises(MissingSurrogate):
        VectorEstimator(SymbolicVector((harvest.spec("deposit"),)), {}, harvest.world)


def test_point_level_fits_and_predict():
    points = _linear_points()
    poly = fit_polynomial(points, output_index=0, degree=1)
    nearest = fit_nearest(points, output_index=0)
    p = points[7]
    value, outside = predict(poly, p.inputs)
    assert value == pytest.approx(p.poststates[0], rel=1e-9)
    assert outside == 0.0
    assert predict(nearest, p.inputs)[0] == p.poststates[0]


def test_estimate_action_splits_states_and_flows(harvest):
    spec = harvest.spec("exchange_usdc_usdt")
    surrogates = fit_action(spec, _linear_points(), Method.POLY, degree=1)
    post, deltas = estimate_action(surrogates, [10**12, 10**12], [4 * 10**6])
    assert len(post) == 3 and len(deltas) == 2
    assert deltas[0] == pytest.approx(-4 * 10**6, rel=1e-6)
