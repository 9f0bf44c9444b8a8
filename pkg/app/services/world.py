"""
Vectorsmith – Executable world: ledger state plus protocol models.

World.execute is the single entry point for running an action. A revert
restores the pre-call snapshot and is reported in the returned record, it
never propagates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from app.exceptions import Revert
from app.models.actions import ActionSpec
from app.models.ledger import AccessLog, LedgerState, ProfitReport, profit
from app.services.protocols.base import Protocol

logger = logging.getLogger(__name__)


@dataclass
class ExecutionRecord:
    action_id: str
    caller: str
    params: tuple[int, ...]
    prestates: tuple[int, ...]
    poststates: tuple[int, ...] = ()
    token_deltas: tuple[int, ...] = ()
    reverted: bool = False
    revert_reason: str | None = None
    result: dict[str, Any] = field(default_factory=dict)
    access: AccessLog | None = None


@dataclass
class VectorRun:
    records: list[ExecutionRecord]
    profit: ProfitReport
    world: "World"

    @property
    def reverted(self) -> bool:
        return bool(self.records) and self.records[-1].reverted

    @property
    def executed_prefix(self) -> int:
        return sum(1 for r in self.records if not r.reverted)


class World:
    def __init__(self, state: LedgerState, protocols: Mapping[str, Protocol], adversary: str):
        self.state = state
        self.protocols = dict(protocols)
        self.adversary = adversary

    # ── State refs ────────────────────────────────────────────
    def protocol(self, pid: str) -> Protocol:
        try:
            return self.protocols[pid]
        except KeyError:
            raise KeyError(f"unknown protocol {pid!r}") from None

    @staticmethod
    def split_ref(ref: str) -> tuple[str, str]:
        pid, sep, name = ref.partition(".")
        if not sep or not name:
            raise ValueError(f"state reference must look like <protocol>.<name>: {ref!r}")
        return pid, name

    def has_ref(self, ref: str) -> bool:
        try:
            pid, name = self.split_ref(ref)
        except ValueError:
            return False
        return pid in self.protocols and self.protocols[pid].has_state(self.state, name)

    def read(self, ref: str) -> int:
        pid, name = self.split_ref(ref)
        return self.protocol(pid).read(self, name)

    def is_assignable(self, ref: str) -> bool:
        pid, name = self.split_ref(ref)
        return self.protocol(pid).is_assignable(self.state, name)

    def assign(self, ref: str, value: int):
        pid, name = self.split_ref(ref)
        self.protocol(pid).assign(self, name, max(int(value), 0))

    # ── Execution ─────────────────────────────────────────────
    def call(self, target: str, caller: str, kwargs: dict[str, Any]) -> dict[str, Any]:
        """Run one protocol method atomically; raises Revert after restoring state."""
        pid, method = self.split_ref(target)
        handle = self.state.snapshot()
        try:
            return self.protocol(pid).call(self, caller, method, kwargs)
        except Revert:
            self.state.restore(handle)
            raise

    def execute(self, spec: ActionSpec, params: Iterable[int], caller: str | None = None,
                trace: bool = False) -> ExecutionRecord:
        caller = caller or self.adversary
        params = tuple(int(p) for p in params)
        tokens = spec.flow_tokens
        try:
            pre = tuple(self.read(ref) for ref in spec.prestates)
        except Revert as exc:
            return ExecutionRecord(spec.id, caller, params, (), reverted=True, revert_reason=exc.reason)
        before = [self.state.balance_of(caller, t) for t in tokens]

        log = None
        try:
            if trace:
                with self.state.tracing() as log:
                    result = self.call(spec.target, caller, spec.kwargs(params))
            else:
                result = self.call(spec.target, caller, spec.kwargs(params))
        except Revert as exc:
            logger.debug("%s reverted: %s", spec.id, exc.reason)
            return ExecutionRecord(spec.id, caller, params, pre, reverted=True,
                                   revert_reason=exc.reason, access=log)

        post = tuple(self.read(ref) for ref in spec.poststates)
        deltas = tuple(self.state.balance_of(caller, t) - b for t, b in zip(tokens, before))
        return ExecutionRecord(spec.id, caller, params, pre, post, deltas, result=result, access=log)

    def run_vector(self, steps: Iterable[tuple[ActionSpec, Iterable[int]]]) -> VectorRun:
        """Execute steps on a clone, stopping at the first revert."""
        sandbox = self.clone()
        records: list[ExecutionRecord] = []
        for spec, params in steps:
            rec = sandbox.execute(spec, params)
            records.append(rec)
            if rec.reverted:
                break
        return VectorRun(records, profit(self.state, sandbox.state, self.adversary), sandbox)

    # ── Copies ────────────────────────────────────────────────
    def clone(self) -> "World":
        # Protocol objects hold no state, so they are shared.
        return World(self.state.clone(), self.protocols, self.adversary)

    def snapshot(self):
        return self.state.snapshot()

    def restore(self, handle):
        self.state.restore(handle)


def token_delta_of(record: ExecutionRecord) -> tuple[int, ...] | None:
    """Caller-side flows of a finished execution: out negative, in positive."""
    if record.reverted:
        return None
    return record.token_deltas
