"""
Vectorsmith – Surrogate transition functions.

Each approximated action gets one model per output (every poststate, then
every caller token delta), fitted on the action's data points:
  - polynomial: least squares over all monomials of total degree <= d of the
    standardized inputs (prestates ++ params);
  - nearest: 1-nearest-neighbour in per-feature min-max normalized space.

VectorEstimator composes models along a symbolic vector, feeding predicted
poststates in as the next action's prestates. Actions without a surrogate
run on a sandbox copy of the world.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from itertools import combinations_with_replacement
from math import comb
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from app.exceptions import InsufficientData, MissingSurrogate
from app.models.actions import ActionSpec, SymbolicVector
from app.models.datapoint import DataPoint
from app.services.world import World

logger = logging.getLogger(__name__)


class SurrogateKind(str, enum.Enum):
    POLYNOMIAL = "polynomial"
    NEAREST = "nearest"


class Method(str, enum.Enum):
    """Run-level choice of surrogate: poly, inter (nearest) or exact (no surrogates)."""
    POLY = "poly"
    INTER = "inter"
    EXACT = "exact"


def monomial_exponents(dim: int, degree: int) -> np.ndarray:
    """Exponent rows for every monomial of total degree <= degree, by degree then index order."""
    rows = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(dim), d):
            row = [0] * dim
            for k in combo:
                row[k] += 1
            rows.append(row)
    return np.array(rows, dtype=np.int64).reshape(len(rows), dim)


def _design(z: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    # z: (n, dim) -> (n, n_monomials)
    return np.prod(np.power(z[:, None, :], exponents[None, :, :]), axis=2)


@dataclass
class SurrogateModel:
    kind: SurrogateKind
    input_dim: int
    lo: np.ndarray                      # per-feature training minimum
    hi: np.ndarray                      # per-feature training maximum
    degree: int | None = None
    exponents: np.ndarray | None = None
    coefficients: np.ndarray | None = None
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    train_inputs: np.ndarray | None = None   # normalized, nearest only
    train_outputs: np.ndarray | None = None
    rank_deficient: bool = False
    residual: float = 0.0
    _tree: cKDTree | None = field(default=None, repr=False)

    @property
    def span(self) -> np.ndarray:
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    def extrapolation(self, x: np.ndarray) -> float:
        """Normalized Euclidean distance from x to the training bounding box."""
        gap = np.maximum(self.lo - x, 0.0) + np.maximum(x - self.hi, 0.0)
        return float(np.sqrt(np.sum((gap / self.span) ** 2)))

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.train_inputs)
        return self._tree

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {X.shape[1]}")
        if self.kind is SurrogateKind.POLYNOMIAL:
            z = (X - self.mean) / self.scale
            return _design(z, self.exponents) @ self.coefficients
        _, idx = self.tree().query((X - self.lo) / self.span)
        return self.train_outputs[idx]

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_tree"] = None
        return state

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "input_dim": self.input_dim,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "rank_deficient": self.rank_deficient,
            "residual": self.residual,
        }
        if self.kind is SurrogateKind.POLYNOMIAL:
            out.update(degree=self.degree, exponents=self.exponents.tolist(),
                       coefficients=self.coefficients.tolist(),
                       mean=self.mean.tolist(), scale=self.scale.tolist())
        else:
            out.update(train_inputs=self.train_inputs.tolist(), train_outputs=self.train_outputs.tolist())
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SurrogateModel":
        kind = SurrogateKind(data["kind"])
        arr = lambda key, dtype=float: None if key not in data else np.array(data[key], dtype=dtype)
        model = cls(kind=kind, input_dim=int(data["input_dim"]), lo=arr("lo"), hi=arr("hi"),
                    rank_deficient=bool(data.get("rank_deficient", False)),
                    residual=float(data.get("residual", 0.0)))
        if kind is SurrogateKind.POLYNOMIAL:
            model.degree = int(data["degree"])
            model.exponents = arr("exponents", np.int64).reshape(-1, model.input_dim)
            model.coefficients = arr("coefficients")
            model.mean, model.scale = arr("mean"), arr("scale")
        else:
            model.train_inputs = arr("train_inputs").reshape(-1, model.input_dim)
            model.train_outputs = arr("train_outputs")
        return model


# ── Fitting ───────────────────────────────────────────────────

def _matrices(points: Sequence[DataPoint], output_index: int) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([[float(v) for v in p.inputs] for p in points], dtype=float)
    y = np.array([float(p.outputs[output_index]) for p in points], dtype=float)
    return X.reshape(len(points), -1), y


def fit_polynomial_arrays(X: np.ndarray, y: np.ndarray, degree: int = 2,
                          standardize: bool = True) -> SurrogateModel:
    if degree < 1:
        raise ValueError("degree must be >= 1")
    n, dim = X.shape
    n_coef = comb(dim + degree, degree)
    if n < n_coef:
        raise InsufficientData(f"degree {degree} over {dim} inputs needs {n_coef} points, got {n}")
    if standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        mean, scale = np.zeros(dim), np.ones(dim)
    exponents = monomial_exponents(dim, degree)
    A = _design((X - mean) / scale, exponents)
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    deficient = rank < A.shape[1]
    if deficient:
        logger.warning("Rank-deficient fit (%d of %d columns); using minimum-norm solution", rank, A.shape[1])
    residual = float(np.sum((A @ coef - y) ** 2))
    return SurrogateModel(SurrogateKind.POLYNOMIAL, dim, X.min(axis=0), X.max(axis=0), degree=degree,
                          exponents=exponents, coefficients=coef, mean=mean, scale=scale,
                          rank_deficient=bool(deficient), residual=residual)


def fit_nearest_arrays(X: np.ndarray, y: np.ndarray) -> SurrogateModel:
    if len(X) == 0:
        raise InsufficientData("nearest-neighbour store needs at least one point")
    lo, hi = X.min(axis=0), X.max(axis=0)
    model = SurrogateModel(SurrogateKind.NEAREST, X.shape[1], lo, hi, train_outputs=y.copy())
    model.train_inputs = (X - lo) / model.span
    return model


def fit_polynomial(points: Sequence[DataPoint], output_index: int, degree: int = 2,
                   standardize: bool = True) -> SurrogateModel:
    X, y = _matrices(points, output_index)
    return fit_polynomial_arrays(X, y, degree, standardize)


def fit_nearest(points: Sequence[DataPoint], output_index: int) -> SurrogateModel:
    X, y = _matrices(points, output_index)
    return fit_nearest_arrays(X, y)


def predict(model: SurrogateModel, x: Sequence[float]) -> tuple[float, float]:
    """Model value at x and how far x lies outside the training box."""
    xv = np.asarray(x, dtype=float)
    return float(model.evaluate(xv[None, :])[0]), model.extrapolation(xv)


# ── Per-action bundles ────────────────────────────────────────

@dataclass
class ActionSurrogates:
    action_id: str
    n_poststates: int
    models: list[SurrogateModel]

    def __post_init__(self):
        # Outputs share inputs, so polynomial features are built once per query.
        first = self.models[0] if self.models else None
        self._stacked = None
        if first is not None and all(m.kind is SurrogateKind.POLYNOMIAL for m in self.models):
            if all(m.degree == first.degree and np.array_equal(m.mean, first.mean)
                   and np.array_equal(m.scale, first.scale) for m in self.models):
                self._stacked = np.column_stack([m.coefficients for m in self.models])

    def predict_all(self, x: Sequence[float]) -> np.ndarray:
        xv = np.asarray(x, dtype=float)[None, :]
        if self._stacked is not None:
            m = self.models[0]
            return (_design((xv - m.mean) / m.scale, m.exponents) @ self._stacked)[0]
        return np.array([float(m.evaluate(xv)[0]) for m in self.models])

    def to_dict(self) -> dict:
        return {"action": self.action_id, "n_poststates": self.n_poststates,
                "models": [m.to_dict() for m in self.models]}

    @classmethod
    def from_dict(cls, data: dict) -> "ActionSurrogates":
        return cls(data["action"], int(data["n_poststates"]),
                   [SurrogateModel.from_dict(m) for m in data["models"]])


def fit_action(spec: ActionSpec, points: Sequence[DataPoint], method: Method | str = Method.POLY,
               degree: int = 2, standardize: bool = True) -> ActionSurrogates:
    method = Method(method)
    if method is Method.EXACT:
        raise ValueError("exact actions carry no surrogates")
    usable = [p for p in points if not p.reverted]
    n_out = len(spec.output_names)
    models = []
    X = np.array([[float(v) for v in p.inputs] for p in usable], dtype=float).reshape(len(usable), -1)
    for k in range(n_out):
        y = np.array([float(p.outputs[k]) for p in usable], dtype=float)
        if method is Method.POLY:
            models.append(fit_polynomial_arrays(X, y, degree, standardize))
        else:
            models.append(fit_nearest_arrays(X, y))
    return ActionSurrogates(spec.id, len(spec.poststates), models)


def fit_all(specs: Iterable[ActionSpec], points: Mapping[str, Sequence[DataPoint]],
            method: Method | str = Method.POLY, degree: int = 2,
            only: Iterable[str] | None = None) -> dict[str, ActionSurrogates]:
    wanted = set(only) if only is not None else None
    out = {}
    for spec in specs:
        if spec.id in points and (wanted is None or spec.id in wanted):
            out[spec.id] = fit_action(spec, points[spec.id], method, degree)
    return out


def estimate_action(surrogates: ActionSurrogates, prestates: Sequence[float],
                    params: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    outs = surrogates.predict_all(list(prestates) + list(params))
    return outs[:surrogates.n_poststates], outs[surrogates.n_poststates:]


def dump_models(models: Mapping[str, ActionSurrogates], path: str | Path):
    payload = {k: models[k].to_dict() for k in sorted(models)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_models(path: str | Path) -> dict[str, ActionSurrogates]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return {k: ActionSurrogates.from_dict(v) for k, v in data.items()}


# ── Composition along a vector ────────────────────────────────

@dataclass
class Trajectory:
    refs: tuple[str, ...]
    tokens: tuple[str, ...]
    initial_states: np.ndarray
    initial_balances: np.ndarray
    states: list[np.ndarray]            # after each step, tracked refs
    balances: list[np.ndarray]          # after each step, adversary balances of `tokens`
    reverted_at: int | None
    profit: float


class VectorEstimator:
    """Estimated execution of a symbolic vector under frozen surrogates."""

    def __init__(self, vector: SymbolicVector, surrogates: Mapping[str, ActionSurrogates],
                 world: World, exact_ids: Iterable[str] = ()):
        self.vector = vector
        self.world = world
        exact = set(exact_ids)
        self.exact = [spec.id in exact or not spec.approximate for spec in vector]
        self.models: list[ActionSurrogates | None] = []
        for spec, is_exact in zip(vector, self.exact):
            if is_exact:
                self.models.append(None)
            elif spec.id in surrogates:
                self.models.append(surrogates[spec.id])
            else:
                raise MissingSurrogate(f"no surrogate fitted for {spec.id}")

        self.refs = tuple(dict.fromkeys(r for s in vector for r in s.prestates + s.poststates))
        self.tokens = tuple(dict.fromkeys(t for s in vector for t in s.flow_tokens))
        self._ref_pos = {r: k for k, r in enumerate(self.refs)}
        self._tok_pos = {t: k for k, t in enumerate(self.tokens)}
        self.initial_states = np.array([float(world.read(r)) for r in self.refs], dtype=float)
        self.initial_balances = np.array(
            [float(world.state.balance_of(world.adversary, t)) for t in self.tokens], dtype=float)
        self._weights = np.array(
            [float(world.state.price_of(t)) / world.state.token(t).unit for t in self.tokens], dtype=float)
        self._initial_ints = [world.read(r) for r in self.refs]
        self._sandbox: World | None = None
        self._base = None
        if any(self.exact):
            self._sandbox = world.clone()
            self._base = self._sandbox.snapshot()
        # Views computed from other tracked refs follow from those refs; never pin them.
        self._pinnable = {r: self._pinnable_ref(r) for r in self.refs}

    def _pinnable_ref(self, ref: str) -> bool:
        if not self.world.is_assignable(ref):
            return False
        pid, name = self.world.split_ref(ref)
        deps = self.world.protocol(pid).view_dependencies(name)
        return not any(fnmatchcase(r, d) for d in deps for r in self.refs if r != ref)

    def _sync_sandbox(self, states: np.ndarray, balances: np.ndarray):
        sb = self._sandbox
        for ref, value in zip(self.refs, states):
            if self._pinnable[ref]:
                target = int(round(value))
                if sb.read(ref) != target:
                    sb.assign(ref, target)
        for tok, value in zip(self.tokens, balances):
            target = max(int(round(value)), 0)
            if sb.state.balance_of(sb.adversary, tok) != target:
                sb.state.set_balance(sb.adversary, tok, target)

    def run(self, params: Sequence[Sequence[float]]) -> Trajectory:
        states = self.initial_states.copy()
        balances = self.initial_balances.copy()
        out_states, out_balances = [], []
        reverted_at = None
        if self._sandbox is not None:
            self._sandbox.restore(self._base)
        dirty = False  # sandbox diverged from the estimate

        for k, (spec, values, model) in enumerate(zip(self.vector, params, self.models)):
            if model is None:
                if dirty:
                    self._sync_sandbox(states, balances)
                rec = self._sandbox.execute(spec, [int(round(v)) for v in values])
                if rec.reverted:
                    reverted_at = k
                    break
                states = np.array([float(self._sandbox.read(r)) for r in self.refs], dtype=float)
                balances = np.array([float(self._sandbox.state.balance_of(self._sandbox.adversary, t))
                                     for t in self.tokens], dtype=float)
                dirty = False
            else:
                x = [states[self._ref_pos[r]] for r in spec.prestates] + [float(v) for v in values]
                outs = model.predict_all(x)
                states = states.copy()
                balances = balances.copy()
                for r, v in zip(spec.poststates, outs[:len(spec.poststates)]):
                    states[self._ref_pos[r]] = v
                for t, d in zip(spec.flow_tokens, outs[len(spec.poststates):]):
                    balances[self._tok_pos[t]] += d
                dirty = True
            out_states.append(states)
            out_balances.append(balances)

        final = out_balances[-1] if out_balances else self.initial_balances
        profit = float(np.dot(final - self.initial_balances, self._weights))
        return Trajectory(self.refs, self.tokens, self.initial_states, self.initial_balances,
                          out_states, out_balances, reverted_at, profit)
