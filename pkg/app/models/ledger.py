"""
Vectorsmith – Deterministic in-memory world state.

Holds token balances per (account, token) and integer member variables per
(protocol, variable). All amounts are Python ints in base units, so there is
no overflow and no floating point anywhere in protocol execution.

Usage:
    state = LedgerState([TokenId("USDC", 6)], prices={"USDC": 1})
    state.mint("alice", "USDC", 100 * 10**6)
    handle = state.snapshot()
    state.transfer("alice", "bob", "USDC", 10)
    state.restore(handle)
"""

from __future__ import annotations

import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from app.exceptions import Revert

logger = logging.getLogger(__name__)

MAX_DECIMALS = 18


@dataclass(frozen=True)
class TokenId:
    symbol: str
    decimals: int

    def __post_init__(self):
        if not self.symbol:
            raise ValueError("token symbol must be non-empty")
        if not 0 <= self.decimals <= MAX_DECIMALS:
            raise ValueError(f"{self.symbol}: decimals must be in [0, {MAX_DECIMALS}]")

    @property
    def unit(self) -> int:
        """Base units per whole token."""
        return 10 ** self.decimals


@dataclass(frozen=True)
class SnapshotHandle:
    """Opaque copy of both state maps; only LedgerState.restore reads it."""
    _balances: Mapping[tuple[str, str], int]
    _vars: Mapping[tuple[str, str], int]


@dataclass
class AccessLog:
    """Storage keys touched while tracing is active."""
    reads: set[str] = field(default_factory=set)
    writes: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class ProfitReport:
    per_token: dict[str, int]
    usd_profit: Fraction


def balance_key(account: str, token: str) -> str:
    return f"balance:{account}:{token}"


def var_key(protocol_id: str, name: str) -> str:
    return f"{protocol_id}.{name}"


class LedgerState:
    """Single-writer world state. Clones are independent and may run concurrently."""

    def __init__(self, tokens: Iterable[TokenId], prices: Mapping[str, Fraction | int | str]):
        self.tokens: Mapping[str, TokenId] = MappingProxyType({t.symbol: t for t in tokens})
        unknown = set(prices) - set(self.tokens)
        if unknown:
            raise ValueError(f"prices for unregistered tokens: {sorted(unknown)}")
        # Constant for the lifetime of a run; clones share the same mapping.
        self.prices: Mapping[str, Fraction] = MappingProxyType(
            {sym: Fraction(p) for sym, p in prices.items()}
        )
        self._balances: dict[tuple[str, str], int] = {}
        self._vars: dict[tuple[str, str], int] = {}
        self._log: AccessLog | None = None

    # ── Tokens / prices ───────────────────────────────────────
    def token(self, symbol: str) -> TokenId:
        try:
            return self.tokens[symbol]
        except KeyError:
            raise KeyError(f"unknown token {symbol!r}") from None

    def price_of(self, symbol: str) -> Fraction:
        """USD per whole token; tokens missing from the price table are worth 0."""
        return self.prices.get(symbol, Fraction(0))

    # ── Balances ──────────────────────────────────────────────
    def balance_of(self, account: str, token: str) -> int:
        if self._log is not None:
            self._log.reads.add(balance_key(account, token))
        return self._balances.get((account, token), 0)

    def _write_balance(self, account: str, token: str, amount: int):
        if self._log is not None:
            self._log.writes.add(balance_key(account, token))
        if amount:
            self._balances[(account, token)] = amount
        else:
            self._balances.pop((account, token), None)

    def transfer(self, src: str, dst: str, token: str, amount: int):
        """Move `amount` base units; raises Revert when `src` cannot cover it."""
        if amount < 0:
            raise ValueError("transfer amount must be non-negative")
        self.token(token)
        have = self.balance_of(src, token)
        if have < amount:
            raise Revert(f"insufficient {token} balance of {src}: {have} < {amount}")
        if amount == 0 or src == dst:
            return
        self._write_balance(src, token, have - amount)
        self._write_balance(dst, token, self.balance_of(dst, token) + amount)

    def mint(self, account: str, token: str, amount: int):
        if amount < 0:
            raise ValueError("mint amount must be non-negative")
        self.token(token)
        self._write_balance(account, token, self.balance_of(account, token) + amount)

    def burn(self, account: str, token: str, amount: int):
        if amount < 0:
            raise ValueError("burn amount must be non-negative")
        have = self.balance_of(account, token)
        if have < amount:
            raise Revert(f"burn exceeds {token} balance of {account}: {have} < {amount}")
        self._write_balance(account, token, have - amount)

    def set_balance(self, account: str, token: str, amount: int):
        """Overwrite a balance. Only for estimation sandboxes and fixtures."""
        if amount < 0:
            raise ValueError("balance must be non-negative")
        self._write_balance(account, token, amount)

    def total_supply(self, token: str) -> int:
        return sum(v for (_, t), v in self._balances.items() if t == token)

    def holdings(self, account: str) -> dict[str, int]:
        return {t: v for (a, t), v in sorted(self._balances.items()) if a == account}

    # ── Protocol member variables ─────────────────────────────
    def has_var(self, protocol_id: str, name: str) -> bool:
        return (protocol_id, name) in self._vars

    def get_var(self, protocol_id: str, name: str) -> int:
        if self._log is not None:
            self._log.reads.add(var_key(protocol_id, name))
        try:
            return self._vars[(protocol_id, name)]
        except KeyError:
            raise KeyError(f"unknown state variable {var_key(protocol_id, name)}") from None

    def get_var_or(self, protocol_id: str, name: str, default: int = 0) -> int:
        if self._log is not None:
            self._log.reads.add(var_key(protocol_id, name))
        return self._vars.get((protocol_id, name), default)

    def set_var(self, protocol_id: str, name: str, value: int):
        if self._log is not None:
            self._log.writes.add(var_key(protocol_id, name))
        self._vars[(protocol_id, name)] = int(value)

    def var_names(self, protocol_id: str) -> list[str]:
        return sorted(n for (p, n) in self._vars if p == protocol_id)

    # ── Snapshot / restore ────────────────────────────────────
    def snapshot(self) -> SnapshotHandle:
        return SnapshotHandle(dict(self._balances), dict(self._vars))

    def restore(self, handle: SnapshotHandle):
        self._balances = dict(handle._balances)
        self._vars = dict(handle._vars)

    def clone(self) -> "LedgerState":
        other = LedgerState.__new__(LedgerState)
        other.tokens = self.tokens
        other.prices = self.prices
        other._balances = dict(self._balances)
        other._vars = dict(self._vars)
        other._log = None
        return other

    # Mapping proxies do not pickle; worker processes get plain dicts back.
    def __getstate__(self) -> dict:
        return {"tokens": dict(self.tokens), "prices": dict(self.prices),
                "balances": self._balances, "vars": self._vars}

    def __setstate__(self, state: dict):
        self.tokens = MappingProxyType(state["tokens"])
        self.prices = MappingProxyType(state["prices"])
        self._balances = state["balances"]
        self._vars = state["vars"]
        self._log = None

    # ── Access tracing ────────────────────────────────────────
    @contextmanager
    def tracing(self) -> Iterator[AccessLog]:
        """Record every storage key read or written inside the block."""
        previous = self._log
        log = AccessLog()
        self._log = log
        try:
            yield log
        finally:
            self._log = previous

    # ── Canonical serialization ───────────────────────────────
    def to_canonical(self) -> dict:
        balances: dict[str, dict[str, str]] = {}
        for (account, token), amount in sorted(self._balances.items()):
            if amount:
                balances.setdefault(account, {})[token] = str(amount)
        protocol_vars: dict[str, dict[str, str]] = {}
        for (pid, name), value in sorted(self._vars.items()):
            protocol_vars.setdefault(pid, {})[name] = str(value)
        return {
            "balances": balances,
            "prices": {s: f"{p.numerator}/{p.denominator}" for s, p in sorted(self.prices.items())},
            "protocol_vars": protocol_vars,
            "tokens": {s: {"decimals": t.decimals} for s, t in sorted(self.tokens.items())},
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_canonical(), sort_keys=True, separators=(",", ":"))

    def state_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LedgerState):
            return NotImplemented
        return self.canonical_json() == other.canonical_json()

    __hash__ = None  # mutable


def usd_value(state: LedgerState, token: str, amount: int | float) -> Fraction | float:
    """Value `amount` base units of `token` at the run's constant price."""
    price = state.price_of(token)
    if isinstance(amount, float):
        return amount * float(price) / state.token(token).unit
    return Fraction(amount) * price / state.token(token).unit


def profit(before: LedgerState, after: LedgerState, adversary: str) -> ProfitReport:
    """Balance(after, adversary) - Balance(before, adversary), weighted by price."""
    if dict(before.prices) != dict(after.prices):
        raise ValueError("profit requires both states to share one price table")
    held_before = before.holdings(adversary)
    held_after = after.holdings(adversary)
    per_token: dict[str, int] = {}
    usd = Fraction(0)
    for token in sorted(set(held_before) | set(held_after)):
        delta = held_after.get(token, 0) - held_before.get(token, 0)
        if delta:
            per_token[token] = delta
            usd += usd_value(after, token, delta)
    return ProfitReport(per_token=per_token, usd_profit=usd)
