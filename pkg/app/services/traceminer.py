"""
Vectorsmith – Action candidate mining from recorded traces.

Pipeline, each stage usable on its own:
  filter_interface      drop read-only, privileged and token-permission functions
  learn_special_params  concretize non-integer arguments from historical calls
  check_executable      probe each concretized candidate on a world copy, recording
                        the storage it touches
  raw_dependencies      read-after-write edges between candidates; candidates with
                        no edge in either direction are dropped

Storage keys use the ledger's access-log format: "<protocol>.<var>" for member
variables and "balance:<account>:<token>" for balances. Keys that mention the
caller's own account are sender-scoped and never create a dependency.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Literal, Mapping, Sequence

import yaml
from pydantic import BaseModel, ValidationError

from app.exceptions import ConfigError, Revert
from app.models.benchmark import ActionConfig, ParamConfig, parse_amount
from app.services.world import World

logger = logging.getLogger(__name__)

DEFAULT_MAX_CHOICES = 20
DEFAULT_PROBE_AMOUNT = 1000

# Owner/admin/governance verbs; explicit `privileged: true` flags catch the rest.
PRIVILEGED_NAMES = re.compile(
    r"(owner|admin|governance|governor|guardian|pause|upgrade|emergency|rescue|sweep|kill)",
    re.IGNORECASE,
)
TOKEN_PERMISSION_FUNCTIONS = frozenset(
    {"approve", "permit", "increaseAllowance", "decreaseAllowance", "setApprovalForAll"}
)
TOKEN_PERMISSION_PARAMS = frozenset({"deadline"})

ParamKind = Literal["int", "address", "bytes", "string", "array", "enum"]


# ── Types ────────────────────────────────────────────────────

class ParamDecl(BaseModel):
    name: str
    kind: ParamKind = "int"


class InterfaceEntry(BaseModel):
    contract: str
    name: str
    mutability: Literal["view", "pure", "nonpayable", "payable"] = "nonpayable"
    params: list[ParamDecl] = []
    privileged: bool = False

    @property
    def id(self) -> str:
        return f"{self.contract}.{self.name}"

    @property
    def special_params(self) -> list[str]:
        return [p.name for p in self.params if p.kind != "int"]

    @property
    def int_params(self) -> list[str]:
        return [p.name for p in self.params if p.kind == "int"]


class TraceRecord(BaseModel):
    contract: str
    function: str
    args: dict[str, Any] = {}
    sender: str | None = None
    storage_reads: set[str] = set()
    storage_writes: set[str] = set()
    sender_scoped: set[str] = set()
    token_deltas: dict[str, int] = {}

    @property
    def id(self) -> str:
        return f"{self.contract}.{self.function}"

    @property
    def global_reads(self) -> set[str]:
        return self.storage_reads - self.sender_scoped

    @property
    def global_writes(self) -> set[str]:
        return self.storage_writes - self.sender_scoped

    def to_json(self) -> dict[str, Any]:
        return {
            "contract": self.contract,
            "function": self.function,
            "args": self.args,
            "sender": self.sender,
            "storage_reads": sorted(self.storage_reads),
            "storage_writes": sorted(self.storage_writes),
            "sender_scoped": sorted(self.sender_scoped),
            "token_deltas": dict(sorted(self.token_deltas.items())),
        }


@dataclass(frozen=True)
class MinedCandidate:
    """A function with every non-integer argument fixed to a historical value."""
    contract: str
    function: str
    int_params: tuple[str, ...]
    fixed: tuple[tuple[str, Any], ...] = ()

    @property
    def base_id(self) -> str:
        return f"{self.contract}.{self.function}"

    @property
    def id(self) -> str:
        if not self.fixed:
            return self.base_id
        return self.base_id + "[" + ",".join(f"{k}={v}" for k, v in self.fixed) + "]"

    @property
    def action_id(self) -> str:
        parts = [self.contract, self.function] + [f"{k}_{v}" for k, v in self.fixed]
        return re.sub(r"[^A-Za-z0-9_]", "_", "_".join(str(p) for p in parts))

    def to_json(self) -> dict[str, Any]:
        return {"id": self.id, "contract": self.contract, "function": self.function,
                "int_params": list(self.int_params), "fixed": dict(self.fixed)}


@dataclass
class LearnResult:
    candidates: list[MinedCandidate]
    overflow: list[str]                 # too many historical choices
    unobserved: list[str]               # special params but no historical calls

    def to_json(self) -> dict[str, Any]:
        return {"candidates": [c.to_json() for c in self.candidates],
                "overflow": self.overflow, "unobserved": self.unobserved}


@dataclass
class MiningResult:
    filtered: list[InterfaceEntry]
    learned: LearnResult
    probes: dict[str, TraceRecord]
    rejected: list[str]                 # reverted on probe
    dependencies: dict[str, set[str]]
    independent: list[str]
    actions: list[ActionConfig] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "actions": [a.model_dump(exclude_defaults=False) for a in self.actions],
            "dependencies": dependencies_to_json(self.dependencies)["dependencies"],
            "independent": self.independent,
            "overflow": self.learned.overflow,
            "rejected": self.rejected,
            "unobserved": self.learned.unobserved,
        }


# ── Loading ──────────────────────────────────────────────────

def load_interfaces(path: str | Path) -> list[InterfaceEntry]:
    """YAML: {contracts: {<contract>: [<entry>, ...]}}."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path.name}: {e}") from None
    entries, errors = [], []
    for contract, funcs in (data.get("contracts") or {}).items():
        seen = set()
        for k, raw in enumerate(funcs or []):
            try:
                entry = InterfaceEntry.model_validate({"contract": contract, **raw})
            except ValidationError as e:
                errors += [f"contracts.{contract}.{k}.{'.'.join(map(str, err['loc']))}: {err['msg']}"
                           for err in e.errors()]
                continue
            if entry.name in seen:
                errors.append(f"contracts.{contract}.{k}.name: duplicate function {entry.name!r}")
            seen.add(entry.name)
            entries.append(entry)
    if errors:
        raise ConfigError(errors)
    return entries


def load_traces(path: str | Path) -> list[TraceRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(TraceRecord.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            raise ConfigError(f"{Path(path).name}:{lineno}: {e}") from None
    return records


def dump_json(payload: Any, path: str | Path):
    Path(path).write_text(to_json_text(payload), encoding="utf-8")


def to_json_text(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ── Stage 1: interface filtering ─────────────────────────────

def is_privileged(entry: InterfaceEntry) -> bool:
    return entry.privileged or bool(PRIVILEGED_NAMES.search(entry.name))


def filter_interface(entries: Iterable[InterfaceEntry]) -> list[InterfaceEntry]:
    kept = []
    for entry in entries:
        if entry.mutability in ("view", "pure"):
            continue
        if is_privileged(entry):
            logger.debug("Dropping privileged %s", entry.id)
            continue
        if entry.name in TOKEN_PERMISSION_FUNCTIONS:
            continue
        params = [p for p in entry.params if p.name not in TOKEN_PERMISSION_PARAMS]
        kept.append(entry.model_copy(update={"params": params}))
    return kept


# ── Stage 2: special parameters ──────────────────────────────

def learn_special_params(candidates: Sequence[InterfaceEntry], corpus: Sequence[TraceRecord],
                         max_choices: int = DEFAULT_MAX_CHOICES) -> LearnResult:
    if not corpus:
        raise ValueError("trace corpus is empty")
    by_function: dict[str, list[TraceRecord]] = {}
    for rec in corpus:
        by_function.setdefault(rec.id, []).append(rec)

    out, overflow, unobserved = [], [], []
    for entry in candidates:
        special = entry.special_params
        ints = tuple(entry.int_params)
        if not special:
            out.append(MinedCandidate(entry.contract, entry.name, ints))
            continue
        choices: dict[str, tuple[tuple[str, Any], ...]] = {}
        for rec in by_function.get(entry.id, []):
            if all(name in rec.args for name in special):
                combo = tuple((name, rec.args[name]) for name in special)
                choices.setdefault(json.dumps(combo, sort_keys=True), combo)
        if not choices:
            unobserved.append(entry.id)
        elif len(choices) > max_choices:
            logger.info("%s has %d historical choices (max %d)", entry.id, len(choices), max_choices)
            overflow.append(entry.id)
        else:
            out += [MinedCandidate(entry.contract, entry.name, ints, combo) for combo in choices.values()]
    out.sort(key=lambda c: c.id)
    return LearnResult(out, sorted(overflow), sorted(unobserved))


# ── Stage 3: executability probes ────────────────────────────

def _sender_scoped(key: str, account: str) -> bool:
    return account in key.split(":")[1:]


def check_executable(candidate: MinedCandidate, world: World, caller: str | None = None,
                     probe_amount: int = DEFAULT_PROBE_AMOUNT) -> tuple[bool, TraceRecord]:
    """Run the candidate once on a copy of `world`; the original is never touched."""
    caller = caller or world.adversary
    kwargs = {name: probe_amount for name in candidate.int_params}
    kwargs.update(dict(candidate.fixed))
    sandbox = world.clone()
    before = sandbox.state.holdings(caller)
    ok = True
    with sandbox.state.tracing() as log:
        try:
            sandbox.call(candidate.base_id, caller, kwargs)
        except Revert as e:
            logger.debug("Probe of %s reverted: %s", candidate.id, e.reason)
            ok = False
        except TypeError as e:
            # Interface and simulator disagree on the argument list.
            logger.debug("Probe of %s failed: %s", candidate.id, e)
            ok = False
    after = sandbox.state.holdings(caller)
    deltas = {t: after.get(t, 0) - before.get(t, 0) for t in set(before) | set(after)}
    touched = log.reads | log.writes
    record = TraceRecord(
        contract=candidate.contract, function=candidate.function, args=kwargs, sender=caller,
        storage_reads=log.reads, storage_writes=log.writes,
        sender_scoped={k for k in touched if _sender_scoped(k, caller)},
        token_deltas={t: d for t, d in deltas.items() if d} if ok else {},
    )
    return ok, record


# ── Stage 4: read-after-write dependencies ───────────────────

def merge_records(records: Iterable[TraceRecord]) -> dict[str, TraceRecord]:
    """One record per function: the union of all its recorded accesses."""
    merged: dict[str, TraceRecord] = {}
    for rec in records:
        cur = merged.get(rec.id)
        if cur is None:
            merged[rec.id] = rec.model_copy(deep=True)
        else:
            cur.storage_reads |= rec.storage_reads
            cur.storage_writes |= rec.storage_writes
            cur.sender_scoped |= rec.sender_scoped
    return merged


def raw_dependencies(records: Mapping[str, TraceRecord]) -> dict[str, set[str]]:
    """deps[a] = {b != a : a reads some global key b writes}."""
    return {
        a: {b for b, rb in records.items() if b != a and ra.global_reads & rb.global_writes}
        for a, ra in records.items()
    }


def independent(deps: Mapping[str, set[str]]) -> list[str]:
    depended_on = set().union(*deps.values()) if deps else set()
    return sorted(a for a, d in deps.items() if not d and a not in depended_on)


def dependencies_to_json(deps: Mapping[str, set[str]]) -> dict[str, Any]:
    return {"dependencies": {a: sorted(d) for a, d in sorted(deps.items())},
            "independent": independent(deps)}


# ── End to end ───────────────────────────────────────────────

def _is_ref(world: World, key: str) -> bool:
    return not key.startswith("balance:") and world.has_ref(key)


def _historical_upper(corpus: Sequence[TraceRecord], base_id: str, name: str, floor: int) -> int:
    values = []
    for rec in corpus:
        if rec.id == base_id and name in rec.args:
            try:
                values.append(parse_amount(rec.args[name]))
            except ValueError:
                continue
    return max(values + [floor])


def to_action_config(candidate: MinedCandidate, probe: TraceRecord, world: World,
                     corpus: Sequence[TraceRecord], probe_amount: int) -> ActionConfig:
    return ActionConfig(
        id=candidate.action_id,
        target=candidate.base_id,
        fixed_args=dict(candidate.fixed),
        params=[ParamConfig(name=p, lower=1,
                            upper=_historical_upper(corpus, candidate.base_id, p, probe_amount))
                for p in candidate.int_params],
        prestates=sorted(k for k in probe.global_reads if _is_ref(world, k)),
        poststates=sorted(k for k in probe.global_writes if _is_ref(world, k)),
        tokens_in=sorted(t for t, d in probe.token_deltas.items() if d < 0),
        tokens_out=sorted(t for t, d in probe.token_deltas.items() if d > 0),
    )


def mine(entries: Sequence[InterfaceEntry], corpus: Sequence[TraceRecord], world: World,
         max_choices: int = DEFAULT_MAX_CHOICES, caller: str | None = None,
         probe_amount: int = DEFAULT_PROBE_AMOUNT) -> MiningResult:
    filtered = filter_interface(entries)
    learned = learn_special_params(filtered, corpus, max_choices)
    logger.info("Interface: %d functions, %d after filtering, %d concretized candidates",
                len(entries), len(filtered), len(learned.candidates))

    probes, rejected = {}, []
    for cand in learned.candidates:
        ok, record = check_executable(cand, world, caller, probe_amount)
        if ok:
            probes[cand.id] = record
        else:
            rejected.append(cand.id)

    deps = raw_dependencies(probes)
    dropped = independent(deps)
    by_id = {c.id: c for c in learned.candidates}
    actions = [to_action_config(by_id[cid], probes[cid], world, corpus, probe_amount)
               for cid in sorted(probes) if cid not in dropped]
    logger.info("Mined %d actions (%d reverted on probe, %d independent)",
                len(actions), len(rejected), len(dropped))
    return MiningResult(filtered, learned, probes, rejected, deps, dropped, actions)


def entries_to_json(entries: Iterable[InterfaceEntry]) -> list[dict[str, Any]]:
    return [e.model_dump() for e in entries]
