"""
Vectorsmith – Collateralized lending market model.

LP tokens of a constant-product pair are accepted as collateral and valued at
the pair's spot reserves: value(lp) = 2 * reserve_quote * lp / total_supply,
with the quote token assumed worth one dollar. The spot valuation is the
weakness: one large swap through the pair inflates collateral value.

Values are tracked in WAD (10**18 per USD).
"""

from __future__ import annotations

from fractions import Fraction
from typing import TYPE_CHECKING, Any

from app.exceptions import ConfigError, Revert
from app.models.ledger import LedgerState
from app.services.protocols.base import Protocol, action, view

if TYPE_CHECKING:
    from app.services.world import World

WAD = 10 ** 18


class LendingMarket(Protocol):
    """State per account: collateral:<acct>, debt:<acct> (WAD); reserves are ledger balances."""

    kind = "lending"

    def __init__(self, pid: str, collateral_token: str, lp_oracle: str, quote_token: str,
                 borrowable: dict[str, Fraction], factor: Fraction, decimals: dict[str, int]):
        super().__init__(pid)
        self.collateral_token = collateral_token
        self.lp_oracle = lp_oracle
        self.quote_token = quote_token
        self.borrowable = borrowable
        self.factor = factor
        self._decimals = decimals

    @classmethod
    def from_config(cls, pid: str, cfg: dict[str, Any], state: LedgerState) -> "LendingMarket":
        lp_oracle = cls._require(cfg, "lp_oracle", pid)
        collateral_token = cls._require(cfg, "collateral_token", pid)
        quote_token = cls._require(cfg, "quote_token", pid)
        reserves = {k: cls._amount(v, f"protocols.{pid}.reserves") for k, v in (cfg.get("reserves") or {}).items()}
        borrowable = {sym: Fraction(str(p)) for sym, p in
                      (cfg.get("market_prices") or {sym: 1 for sym in reserves}).items()}
        for sym in [collateral_token, quote_token, *reserves, *borrowable]:
            if sym not in state.tokens:
                raise ConfigError(f"protocols.{pid}: unknown token {sym!r}")
        num, den = (int(v) for v in cfg.get("collateral_factor", [3, 4]))
        if not 0 < num <= den:
            raise ConfigError(f"protocols.{pid}.collateral_factor: must be a fraction in (0, 1]")
        decimals = {sym: state.token(sym).decimals for sym in [quote_token, *borrowable]}
        market = cls(pid, collateral_token, lp_oracle, quote_token, borrowable,
                     Fraction(num, den), decimals)
        for sym, amount in reserves.items():
            state.mint(market.account, sym, amount)
        return market

    # ── Valuation ─────────────────────────────────────────────
    def lp_value(self, world: "World", lp_amount: int) -> int:
        """WAD value of `lp_amount` LP tokens at the pair's spot reserves."""
        pair = world.protocol(self.lp_oracle)
        supply = pair.get(world, "lp_total_supply")
        if supply == 0:
            return 0
        side = "reserve0" if pair.token0 == self.quote_token else "reserve1"
        reserve_quote = pair.get(world, side)
        scale = 10 ** (18 - self._decimals[self.quote_token])
        return 2 * reserve_quote * scale * lp_amount // supply

    def borrow_value(self, token: str, amount: int) -> int:
        price = self.borrowable[token]
        scale = 10 ** (18 - self._decimals[token])
        return int(amount * scale * price)

    def collateral_of(self, world: "World", account: str) -> int:
        return world.state.get_var_or(self.pid, f"collateral:{account}")

    def debt_of(self, world: "World", account: str) -> int:
        return world.state.get_var_or(self.pid, f"debt:{account}")

    def borrow_limit(self, world: "World", account: str) -> int:
        value = self.lp_value(world, self.collateral_of(world, account))
        return value * self.factor.numerator // self.factor.denominator

    def reserve(self, world: "World", token: str) -> int:
        return world.state.balance_of(self.account, token)

    def read(self, world: "World", name: str) -> int:
        if name.startswith("reserve_"):
            return self.reserve(world, name.removeprefix("reserve_"))
        if name.startswith(("collateral:", "debt:")):
            return world.state.get_var_or(self.pid, name)
        return super().read(world, name)

    def has_state(self, state: LedgerState, name: str) -> bool:
        if name.startswith("reserve_"):
            return name.removeprefix("reserve_") in self.borrowable
        if name.startswith(("collateral:", "debt:")):
            return True
        return super().has_state(state, name)

    def is_assignable(self, state: LedgerState, name: str) -> bool:
        return self.has_state(state, name) and name not in self._views

    def assign(self, world: "World", name: str, value: int):
        if name.startswith("reserve_"):
            world.state.set_balance(self.account, name.removeprefix("reserve_"), value)
        else:
            super().assign(world, name, value)

    @view()
    def total_debt(self, world: "World") -> int:
        names = world.state.var_names(self.pid)
        return sum(world.state.get_var(self.pid, n) for n in names if n.startswith("debt:"))

    # ── Actions ───────────────────────────────────────────────
    @action(writes=("collateral:*",))
    def provide_collateral(self, world: "World", caller: str, lp_amount: int) -> dict[str, int]:
        self.require_active(world)
        if lp_amount <= 0:
            raise Revert("collateral amount must be positive")
        world.state.transfer(caller, self.account, self.collateral_token, lp_amount)
        key = f"collateral:{caller}"
        total = self.collateral_of(world, caller) + lp_amount
        self.set(world, key, total)
        return {"collateral": total}

    @action(writes=("debt:*", "reserve_*"))
    def borrow(self, world: "World", caller: str, token: str, amount: int) -> dict[str, int]:
        self.require_active(world)
        if token not in self.borrowable:
            raise Revert(f"{token} is not borrowable")
        if amount <= 0:
            raise Revert("borrow amount must be positive")
        if self.reserve(world, token) < amount:
            raise Revert("insufficient market reserves")
        debt = self.debt_of(world, caller) + self.borrow_value(token, amount)
        if debt > self.borrow_limit(world, caller):
            raise Revert("borrow limit exceeded")
        self.set(world, f"debt:{caller}", debt)
        world.state.transfer(self.account, caller, token, amount)
        return {"debt": debt}
