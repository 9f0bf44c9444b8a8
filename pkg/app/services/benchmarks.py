"""
Vectorsmith – Benchmark loading, world construction and ground-truth replay.

Bundled benchmarks live in app/benchmarks/*.yml and can be referenced by
name; anything else is treated as a path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from math import floor
from pathlib import Path
from typing import Any

import yaml
from pydantic import ValidationError

from app.exceptions import ConfigError
from app.models.actions import ActionSpec, SymbolicParam, validate_spec
from app.models.benchmark import ActionConfig, BenchmarkConfig, capital_multiple
from app.models.ledger import LedgerState, TokenId
from app.services.protocols import PROTOCOL_KINDS
from app.services.world import VectorRun, World

logger = logging.getLogger(__name__)

BUNDLED_DIR = Path(__file__).resolve().parent.parent / "benchmarks"


@dataclass
class Benchmark:
    config: BenchmarkConfig
    world: World
    specs: list[ActionSpec]
    source: Path | None = None
    ground_truth_profit: Fraction | None = None

    @property
    def name(self) -> str:
        return self.config.name

    def spec(self, action_id: str) -> ActionSpec:
        for s in self.specs:
            if s.id == action_id:
                return s
        raise KeyError(f"unknown action {action_id!r}")

    def fresh_world(self) -> World:
        return self.world.clone()

    def ground_truth_steps(self) -> list[tuple[ActionSpec, tuple[int, ...]]] | None:
        if self.config.ground_truth is None:
            return None
        return [(self.spec(s.action), tuple(s.params)) for s in self.config.ground_truth]

    def summary(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.config.description,
            "adversary": self.world.adversary,
            "capital": {k: str(v) for k, v in sorted(self.config.adversary.capital.items())},
            "actions": [s.id for s in self.specs],
            "max_length": self.config.max_length,
            "ground_truth_profit": None if self.ground_truth_profit is None
            else float(self.ground_truth_profit),
        }


# ── Lookup ───────────────────────────────────────────────────

def bundled_benchmarks(directory: Path | None = None) -> list[str]:
    directory = directory or BUNDLED_DIR
    return sorted(p.stem for p in directory.glob("*.yml"))


def resolve_benchmark_path(name_or_path: str | Path, directory: Path | None = None) -> Path:
    path = Path(name_or_path)
    if path.suffix in (".yml", ".yaml") or path.exists():
        if not path.exists():
            raise FileNotFoundError(f"benchmark file not found: {path}")
        return path
    candidate = (directory or BUNDLED_DIR) / f"{name_or_path}.yml"
    if not candidate.exists():
        raise FileNotFoundError(f"no bundled benchmark named {name_or_path!r}")
    return candidate


# ── Construction ─────────────────────────────────────────────

def _format_validation_error(exc: ValidationError) -> list[str]:
    errors = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        if loc:
            errors.append(f"{loc}: {msg}")
        else:
            # Cross-field checks report several "path: message" entries at once.
            errors.extend(msg.split("; "))
    return errors


def _node_at(root: yaml.Node, parts: list[str]) -> yaml.Node | None:
    """Deepest node along a dotted error path; sequence items match by index or by their `id`."""
    node, found = root, None
    for part in parts:
        child = None
        if isinstance(node, yaml.MappingNode):
            child = next((v for k, v in node.value if k.value == part), None)
        elif isinstance(node, yaml.SequenceNode):
            if part.isdigit() and int(part) < len(node.value):
                child = node.value[int(part)]
            else:
                child = next((item for item in node.value if isinstance(item, yaml.MappingNode)
                              and any(k.value == "id" and v.value == part for k, v in item.value)), None)
        if child is None:
            break
        node = found = child
    return found


def with_line_numbers(errors: list[str], text: str) -> list[str]:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return errors
    if root is None:
        return errors
    out = []
    for e in errors:
        path, sep, _ = e.partition(": ")
        node = _node_at(root, path.split(".")) if sep and " " not in path else None
        out.append(f"{e} (line {node.start_mark.line + 1})" if node is not None else e)
    return out


def parse_benchmark(data: Any) -> BenchmarkConfig:
    if not isinstance(data, dict):
        raise ConfigError("benchmark document must be a mapping")
    try:
        return BenchmarkConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from None


def build_world(config: BenchmarkConfig) -> World:
    tokens = [TokenId(sym, t.decimals) for sym, t in config.tokens.items()]
    state = LedgerState(tokens, config.prices())
    protocols = {}
    for pid, cfg in config.protocols.items():
        kind = cfg.get("kind")
        if kind not in PROTOCOL_KINDS:
            raise ConfigError(f"protocols.{pid}.kind: unknown kind {kind!r}; "
                              f"expected one of {sorted(PROTOCOL_KINDS)}")
        protocols[pid] = PROTOCOL_KINDS[kind].from_config(pid, cfg, state)
    for sym, amount in config.adversary.capital.items():
        state.mint(config.adversary.account, sym, amount)
    for account, balances in config.holders.items():
        for sym, amount in balances.items():
            state.mint(account, sym, amount)
    return World(state, protocols, config.adversary.account)


def _resolve_upper(action: ActionConfig, upper: int | str | None, capital: dict[str, int]) -> int:
    if isinstance(upper, int):
        return upper
    factor = Fraction(1) if upper is None else capital_multiple(upper)
    if not action.tokens_in or capital.get(action.tokens_in[0], 0) == 0:
        raise ConfigError(f"actions.{action.id}.params: explicit upper bound required "
                          "(action consumes no token the adversary holds)")
    return floor(capital[action.tokens_in[0]] * factor)


def build_specs(config: BenchmarkConfig) -> list[ActionSpec]:
    specs = []
    for a in config.actions:
        params = [SymbolicParam(p.name, p.lower, _resolve_upper(a, p.upper, config.adversary.capital))
                  for p in a.params]
        specs.append(ActionSpec.build(
            id=a.id, target=a.target, params=params, fixed_args=a.fixed_args,
            prestates=a.prestates, poststates=a.poststates,
            tokens_in=a.tokens_in, tokens_out=a.tokens_out, approximate=a.approximate,
        ))
    return specs


def replay(world: World, steps: list[tuple[ActionSpec, tuple[int, ...]]]) -> VectorRun:
    return world.run_vector(steps)


def benchmark_from_config(config: BenchmarkConfig, source: Path | None = None,
                          check_ground_truth: bool = True) -> Benchmark:
    world = build_world(config)
    specs = build_specs(config)
    errors = []
    for spec in specs:
        errors += [f"actions.{spec.id}: {e}" for e in validate_spec(spec, world)]
    if errors:
        raise ConfigError(errors)

    bench = Benchmark(config, world, specs, source)
    steps = bench.ground_truth_steps()
    if steps is not None:
        run = replay(world, steps)
        if run.reverted:
            rec = run.records[-1]
            raise ConfigError(f"ground_truth: {rec.action_id} reverted ({rec.revert_reason})")
        bench.ground_truth_profit = run.profit.usd_profit
        if check_ground_truth and run.profit.usd_profit <= 0:
            raise ConfigError(f"ground_truth: replay is not profitable ({float(run.profit.usd_profit):.2f} USD)")
        logger.info("Ground truth for %s replays to %.2f USD", config.name, float(run.profit.usd_profit))
    return bench


def load_benchmark(name_or_path: str | Path, check_ground_truth: bool = True,
                   directory: Path | None = None) -> Benchmark:
    path = resolve_benchmark_path(name_or_path, directory)
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path.name}: {exc}") from None
    try:
        config = parse_benchmark(data)
        logger.info("Loaded benchmark %s from %s (%d actions)", config.name, path, len(config.actions))
        return benchmark_from_config(config, path, check_ground_truth)
    except ConfigError as exc:
        raise ConfigError(with_line_numbers(exc.errors, text)) from None
