"""
Vectorsmith – StableSwap pool model.

Integer Newton iterations for the invariant D and for the post-trade balance
y, following the deployed pool contracts: floor division throughout, 255
rounds at most, converged once two iterates differ by at most one unit.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any, Sequence

from app.exceptions import ConfigError, NoConvergence, Revert, ZeroBalance
from app.models.ledger import LedgerState
from app.services.protocols.base import Protocol, action

if TYPE_CHECKING:
    from app.services.world import World

logger = logging.getLogger(__name__)

MAX_ROUNDS = 255
FEE_DENOMINATOR = 10_000


def get_d(xp: Sequence[int], amp: int) -> int:
    """Invariant D for balances `xp` (already in common precision)."""
    n = len(xp)
    if n < 2:
        raise ValueError("pool needs at least two coins")
    if any(x <= 0 for x in xp):
        raise ZeroBalance()
    s = sum(xp)
    d = s
    ann = amp * n
    for _ in range(MAX_ROUNDS):
        d_p = d
        for x in xp:
            d_p = d_p * d // (x * n)
        d_prev = d
        denom = (ann - 1) * d + (n + 1) * d_p
        if denom <= 0:
            raise NoConvergence("invariant denominator vanished")
        d = (ann * s + d_p * n) * d // denom
        if abs(d - d_prev) <= 1:
            return d
    raise NoConvergence()


def get_y(i: int, j: int, x: int, xp: Sequence[int], amp: int) -> int:
    """Balance of coin j that keeps D fixed once coin i holds `x`."""
    n = len(xp)
    if i == j:
        raise ValueError("same coin")
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError("coin index out of range")
    if x <= 0:
        raise ZeroBalance("new balance must be positive")

    d = get_d(xp, amp)
    ann = amp * n
    c = d
    s_ = 0
    for k in range(n):
        if k == i:
            _x = x
        elif k != j:
            _x = xp[k]
        else:
            continue
        s_ += _x
        c = c * d // (_x * n)
    c = c * d // (ann * n)
    b = s_ + d // ann

    y = d
    for _ in range(MAX_ROUNDS):
        y_prev = y
        denom = 2 * y + b - d
        if denom <= 0:
            raise NoConvergence("implied balance is not positive")
        y = (y * y + c) // denom
        if abs(y - y_prev) <= 1:
            return y
    raise NoConvergence()


def exchange_output(i: int, j: int, dx: int, xp: Sequence[int], amp: int,
                    fee: int = 4, fee_denominator: int = FEE_DENOMINATOR) -> int:
    """Amount of coin j paid out for `dx` of coin i, after fee."""
    y = get_y(i, j, xp[i] + dx, xp, amp)
    # One unit held back so rounding never favours the trader.
    dy = xp[j] - y - 1
    dy -= dy * fee // fee_denominator
    return dy


class StableSwapPool(Protocol):
    """n-coin StableSwap pool. State: x0..x{n-1}, amp, fee."""

    kind = "stableswap"

    def __init__(self, pid: str, coins: list[str]):
        super().__init__(pid)
        self.coins = list(coins)

    @classmethod
    def from_config(cls, pid: str, cfg: dict[str, Any], state: LedgerState) -> "StableSwapPool":
        coins = list(cls._require(cfg, "coins", pid))
        balances = [cls._amount(b, f"protocols.{pid}.balances") for b in cls._require(cfg, "balances", pid)]
        if len(coins) < 2 or len(coins) != len(balances):
            raise ConfigError(f"protocols.{pid}: coins and balances must have equal length >= 2")
        for c in coins:
            if c not in state.tokens:
                raise ConfigError(f"protocols.{pid}.coins: unknown token {c!r}")
        decimals = {state.token(c).decimals for c in coins}
        if len(decimals) != 1:
            # Rate multipliers are out of scope; the invariant is computed on raw balances.
            raise ConfigError(f"protocols.{pid}.coins: all coins must share decimals")
        pool = cls(pid, coins)
        state.set_var(pid, "amp", int(cls._require(cfg, "amp", pid)))
        state.set_var(pid, "fee", int(cfg.get("fee", 4)))
        for k, (coin, bal) in enumerate(zip(coins, balances)):
            state.set_var(pid, f"x{k}", bal)
            state.mint(pool.account, coin, bal)
        return pool

    # ── Reads ─────────────────────────────────────────────────
    def balances(self, world: "World") -> list[int]:
        return [self.get(world, f"x{k}") for k in range(len(self.coins))]

    def invariant(self, world: "World") -> int:
        return get_d(self.balances(world), self.get(world, "amp"))

    def quote(self, world: "World", i: int, j: int, dx: int) -> int:
        return exchange_output(i, j, dx, self.balances(world), self.get(world, "amp"),
                               self.get(world, "fee"))

    # ── Actions ───────────────────────────────────────────────
    @action(writes=("x*",))
    def exchange(self, world: "World", caller: str, i: int, j: int, dx: int) -> dict[str, int]:
        self.require_active(world)
        n = len(self.coins)
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise Revert("bad coin index")
        if dx <= 0:
            raise Revert("dx must be positive")
        xp = self.balances(world)
        dy = exchange_output(i, j, dx, xp, self.get(world, "amp"), self.get(world, "fee"))
        if dy <= 0:
            raise Revert("exchange output is zero")
        world.state.transfer(caller, self.account, self.coins[i], dx)
        world.state.transfer(self.account, caller, self.coins[j], dy)
        self.set(world, f"x{i}", xp[i] + dx)
        self.set(world, f"x{j}", xp[j] - dy)
        return {"dy": dy}
