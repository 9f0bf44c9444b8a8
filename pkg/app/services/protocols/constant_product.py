"""
Vectorsmith – Constant-product pair model.
"""

from __future__ import annotations

from math import isqrt
from typing import TYPE_CHECKING, Any

from app.exceptions import ConfigError, Revert
from app.models.ledger import LedgerState
from app.services.protocols.base import Protocol, action

if TYPE_CHECKING:
    from app.services.world import World

FEE_DENOMINATOR = 10_000


def amount_out(dx: int, reserve_in: int, reserve_out: int,
               fee: int = 30, fee_denominator: int = FEE_DENOMINATOR) -> int:
    if dx <= 0 or reserve_in <= 0 or reserve_out <= 0:
        return 0
    dx_after_fee = dx * (fee_denominator - fee)
    return dx_after_fee * reserve_out // (reserve_in * fee_denominator + dx_after_fee)


def liquidity_minted(amount0: int, amount1: int, reserve0: int, reserve1: int, supply: int) -> int:
    if supply == 0:
        return isqrt(amount0 * amount1)
    return min(amount0 * supply // reserve0, amount1 * supply // reserve1)


class ConstantProductPool(Protocol):
    """x*y=k pair. State: reserve0, reserve1, lp_total_supply, fee."""

    kind = "constant_product"

    def __init__(self, pid: str, token0: str, token1: str, lp_token: str):
        super().__init__(pid)
        self.token0 = token0
        self.token1 = token1
        self.lp_token = lp_token

    @classmethod
    def from_config(cls, pid: str, cfg: dict[str, Any], state: LedgerState) -> "ConstantProductPool":
        token0, token1 = cls._require(cfg, "token0", pid), cls._require(cfg, "token1", pid)
        lp_token = cfg.get("lp_token", f"{pid}-LP")
        for field_name, sym in (("token0", token0), ("token1", token1), ("lp_token", lp_token)):
            if sym not in state.tokens:
                raise ConfigError(f"protocols.{pid}.{field_name}: unknown token {sym!r}")
        r0 = cls._amount(cls._require(cfg, "reserve0", pid), f"protocols.{pid}.reserve0")
        r1 = cls._amount(cls._require(cfg, "reserve1", pid), f"protocols.{pid}.reserve1")
        supply = cls._amount(cfg.get("lp_total_supply", isqrt(r0 * r1)), f"protocols.{pid}.lp_total_supply")
        pool = cls(pid, token0, token1, lp_token)
        state.set_var(pid, "reserve0", r0)
        state.set_var(pid, "reserve1", r1)
        state.set_var(pid, "lp_total_supply", supply)
        state.set_var(pid, "fee", int(cfg.get("fee", 30)))
        state.mint(pool.account, token0, r0)
        state.mint(pool.account, token1, r1)
        # Outstanding LP tokens sit with the bootstrap provider unless listed elsewhere.
        lp_holders = {k: cls._amount(v, f"protocols.{pid}.lp_holders") for k, v in cfg.get("lp_holders", {}).items()}
        for holder, amount in lp_holders.items():
            state.mint(holder, lp_token, amount)
        rest = supply - sum(lp_holders.values())
        if rest < 0:
            raise ConfigError(f"protocols.{pid}.lp_holders: exceed lp_total_supply")
        if rest:
            state.mint(f"{pid}:bootstrap", lp_token, rest)
        return pool

    def _side(self, token: str) -> int:
        if token == self.token0:
            return 0
        if token == self.token1:
            return 1
        raise Revert(f"{token} is not traded by {self.pid}")

    def reserves(self, world: "World") -> tuple[int, int]:
        return self.get(world, "reserve0"), self.get(world, "reserve1")

    # ── Actions ───────────────────────────────────────────────
    @action(writes=("reserve0", "reserve1"))
    def swap(self, world: "World", caller: str, token_in: str, dx: int) -> dict[str, int]:
        self.require_active(world)
        side = self._side(token_in)
        if dx <= 0:
            raise Revert("dx must be positive")
        reserves = list(self.reserves(world))
        dy = amount_out(dx, reserves[side], reserves[1 - side], self.get(world, "fee"))
        if dy <= 0:
            raise Revert("insufficient output amount")
        token_out = self.token1 if side == 0 else self.token0
        world.state.transfer(caller, self.account, token_in, dx)
        world.state.transfer(self.account, caller, token_out, dy)
        reserves[side] += dx
        reserves[1 - side] -= dy
        self.set(world, "reserve0", reserves[0])
        self.set(world, "reserve1", reserves[1])
        return {"dy": dy}

    @action(writes=("reserve0", "reserve1", "lp_total_supply"))
    def mint(self, world: "World", caller: str, amount0: int, amount1: int) -> dict[str, int]:
        self.require_active(world)
        if amount0 <= 0 or amount1 <= 0:
            raise Revert("amounts must be positive")
        r0, r1 = self.reserves(world)
        supply = self.get(world, "lp_total_supply")
        if supply and (r0 == 0 or r1 == 0):
            raise Revert("empty reserves")
        liquidity = liquidity_minted(amount0, amount1, r0, r1, supply)
        if liquidity <= 0:
            raise Revert("insufficient liquidity minted")
        world.state.transfer(caller, self.account, self.token0, amount0)
        world.state.transfer(caller, self.account, self.token1, amount1)
        world.state.mint(caller, self.lp_token, liquidity)
        self.set(world, "reserve0", r0 + amount0)
        self.set(world, "reserve1", r1 + amount1)
        self.set(world, "lp_total_supply", supply + liquidity)
        return {"liquidity": liquidity}

    @action(writes=("reserve0", "reserve1", "lp_total_supply"))
    def mint_balanced(self, world: "World", caller: str, amount0: int) -> dict[str, int]:
        """Add liquidity at the current ratio, sized by the token0 leg."""
        r0, r1 = self.reserves(world)
        if r0 == 0 or r1 == 0:
            raise Revert("empty reserves")
        if amount0 <= 0:
            raise Revert("amounts must be positive")
        amount1 = -(-amount0 * r1 // r0)
        return self.mint(world, caller, amount0, amount1)
