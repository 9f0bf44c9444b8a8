"""
Vectorsmith – Yield vault model.

Share accounting mirrors a deployed vault: deposits mint shares against
underlying_in_vault + invested, withdrawals pay out pro rata. When an oracle
pool is configured, `invested` is re-valued from that pool's current balance
ratio on every read, which makes share price manipulable within one
transaction.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any

from app.exceptions import ConfigError, Revert
from app.models.ledger import LedgerState
from app.services.protocols.base import Protocol, action, view

if TYPE_CHECKING:
    from app.services.world import World

logger = logging.getLogger(__name__)


def oracle_invested_balance(principal: int, pool_balances: list[int], coin: int) -> int:
    """Principal re-valued at the pool's current ratio; equals principal when balanced."""
    total = sum(pool_balances)
    if total == 0:
        return 0
    return principal * len(pool_balances) * pool_balances[coin] // total


class Vault(Protocol):
    """State: total_supply, invested_principal, rebalance_enabled, strategy_updates."""

    kind = "vault"

    def __init__(self, pid: str, underlying: str, share_token: str, owner: str,
                 oracle_pool: str | None = None, oracle_coin: int = 0):
        super().__init__(pid)
        self.underlying = underlying
        self.share_token = share_token
        self.owner = owner
        self.oracle_pool = oracle_pool
        self.oracle_coin = oracle_coin
        self.strategy_account = f"{pid}:strategy"

    @classmethod
    def from_config(cls, pid: str, cfg: dict[str, Any], state: LedgerState) -> "Vault":
        underlying = cls._require(cfg, "underlying", pid)
        share_token = cls._require(cfg, "share_token", pid)
        for key, sym in (("underlying", underlying), ("share_token", share_token)):
            if sym not in state.tokens:
                raise ConfigError(f"protocols.{pid}.{key}: unknown token {sym!r}")
        oracle = cfg.get("oracle") or {}
        vault = cls(pid, underlying, share_token, owner=cfg.get("owner", f"{pid}:owner"),
                    oracle_pool=oracle.get("pool"), oracle_coin=int(oracle.get("coin", 0)))

        holders = {k: cls._amount(v, f"protocols.{pid}.holders") for k, v in (cfg.get("holders") or {}).items()}
        supply = cls._amount(cfg.get("total_supply", sum(holders.values())), f"protocols.{pid}.total_supply")
        if sum(holders.values()) > supply:
            raise ConfigError(f"protocols.{pid}.holders: exceed total_supply")
        for holder, shares in holders.items():
            state.mint(holder, share_token, shares)
        if supply > sum(holders.values()):
            state.mint(f"{pid}:bootstrap", share_token, supply - sum(holders.values()))

        principal = cls._amount(cfg.get("invested_principal", 0), f"protocols.{pid}.invested_principal")
        state.set_var(pid, "total_supply", supply)
        state.set_var(pid, "invested_principal", principal)
        state.set_var(pid, "rebalance_enabled", int(bool(cfg.get("rebalance_enabled", False))))
        state.set_var(pid, "strategy_updates", 0)
        state.mint(vault.account, underlying,
                   cls._amount(cfg.get("underlying_in_vault", 0), f"protocols.{pid}.underlying_in_vault"))
        state.mint(vault.strategy_account, underlying, principal)
        return vault

    # ── Views ─────────────────────────────────────────────────
    @view(assignable=True)
    def underlying_in_vault(self, world: "World") -> int:
        return world.state.balance_of(self.account, self.underlying)

    def _assign_underlying_in_vault(self, world: "World", value: int):
        world.state.set_balance(self.account, self.underlying, value)

    @view(assignable=True)
    def invested(self, world: "World") -> int:
        if world.state.has_var(self.pid, "invested_pin"):
            return self.get(world, "invested_pin")
        principal = self.get(world, "invested_principal")
        if self.oracle_pool is None:
            return principal
        pool = world.protocol(self.oracle_pool)
        return oracle_invested_balance(principal, pool.balances(world), self.oracle_coin)

    def _assign_invested(self, world: "World", value: int):
        if self.oracle_pool is None:
            self.set(world, "invested_principal", value)
        else:
            # Sandbox only: freezes the oracle valuation in this world copy.
            self.set(world, "invested_pin", value)

    @view()
    def underlying_with_investment(self, world: "World") -> int:
        return self.underlying_in_vault(world) + self.invested(world)

    def view_dependencies(self, name: str) -> tuple[str, ...]:
        base = (f"{self.pid}.invested_principal",)
        if self.oracle_pool:
            base += (f"{self.oracle_pool}.x*",)
        if name == "invested":
            return base
        if name == "underlying_with_investment":
            return base + (f"{self.pid}.underlying_in_vault",)
        return ()

    # ── Actions ───────────────────────────────────────────────
    def _mint_shares(self, world: "World", caller: str, holder: str, amount: int) -> int:
        self.require_active(world)
        if amount <= 0:
            raise Revert("cannot deposit 0")
        supply = self.get(world, "total_supply")
        value = self.underlying_with_investment(world)
        if supply == 0:
            to_mint = amount
        elif value == 0:
            raise Revert("vault holds no value")
        else:
            to_mint = amount * supply // value
        world.state.transfer(caller, self.account, self.underlying, amount)
        world.state.mint(holder, self.share_token, to_mint)
        self.set(world, "total_supply", supply + to_mint)
        return to_mint

    @action(writes=("total_supply", "underlying_in_vault"))
    def deposit(self, world: "World", caller: str, amount: int) -> dict[str, int]:
        return {"shares": self._mint_shares(world, caller, caller, amount)}

    @action(writes=("total_supply", "underlying_in_vault"))
    def deposit_for(self, world: "World", caller: str, amount: int, holder: str) -> dict[str, int]:
        return {"shares": self._mint_shares(world, caller, holder, amount)}

    @action(writes=("total_supply", "underlying_in_vault", "invested_principal"))
    def withdraw(self, world: "World", caller: str, shares: int) -> dict[str, int]:
        self.require_active(world)
        supply = self.get(world, "total_supply")
        if shares <= 0:
            raise Revert("cannot withdraw 0")
        if supply == 0 or shares > supply:
            raise Revert("shares exceed total supply")
        out = self.underlying_with_investment(world) * shares // supply
        world.state.burn(caller, self.share_token, shares)
        self.set(world, "total_supply", supply - shares)

        idle = self.underlying_in_vault(world)
        if out > idle:
            # Pull the shortfall back from the strategy, then pay what is there.
            principal = self.get(world, "invested_principal")
            pulled = min(out - idle, principal, world.state.balance_of(self.strategy_account, self.underlying))
            if pulled:
                world.state.transfer(self.strategy_account, self.account, self.underlying, pulled)
                self.set(world, "invested_principal", principal - pulled)
            out = min(out, self.underlying_in_vault(world))
        world.state.transfer(self.account, caller, self.underlying, out)
        return {"underlying": out}

    @action(writes=("underlying_in_vault", "invested_principal"))
    def rebalance(self, world: "World", caller: str) -> dict[str, int]:
        if self.get(world, "rebalance_enabled") == 0:
            raise Revert("rebalance disabled")
        idle = self.underlying_in_vault(world)
        moved = idle // 2
        world.state.transfer(self.account, self.strategy_account, self.underlying, moved)
        self.set(world, "invested_principal", self.get(world, "invested_principal") + moved)
        return {"moved": moved}

    @action(writes=("rewards:*",))
    def claim(self, world: "World", caller: str) -> dict[str, int]:
        key = f"rewards:{caller}"
        count = world.state.get_var_or(self.pid, key) + 1
        self.set(world, key, count)
        return {"claims": count}

    @action(writes=("strategy_updates",))
    def set_strategy(self, world: "World", caller: str, strategy: str) -> dict[str, int]:
        if caller != self.owner:
            raise Revert("only owner")
        self.set(world, "strategy_updates", self.get(world, "strategy_updates") + 1)
        return {}
