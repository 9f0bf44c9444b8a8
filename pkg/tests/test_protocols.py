import random

import pytest

from app.exceptions import Revert, ZeroBalance
from app.services.protocols.constant_product import amount_out, liquidity_minted
from app.services.protocols.stableswap import exchange_output, get_d, get_y
from app.services.protocols.vault import oracle_invested_balance

E6 = 10**6
E18 = 10**18


# ── StableSwap math ──────────────────────────────────────────

def _residual_sign(d: int, xp: list[int], amp: int) -> int:
    """Sign of ann*D + D^(n+1)/(n^n prod x) - ann*S - D, scaled to integers."""
    n = len(xp)
    ann = amp * n
    prod = 1
    for x in xp:
        prod *= x
    denom = n ** n * prod
    lhs = (ann * d - ann * sum(xp) - d) * denom + d ** (n + 1)
    return (lhs > 0) - (lhs < 0)


def _bisect_d(xp: list[int], amp: int) -> int:
    """Largest integer D with a non-positive invariant residual."""
    lo, hi = 0, sum(xp)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _residual_sign(mid, xp, amp) <= 0:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _random_pool(rng: random.Random) -> tuple[list[int], int]:
    n = rng.randint(2, 4)
    base = 10 ** rng.uniform(7, 14)
    xp = [int(base * rng.uniform(0.1, 10)) for _ in range(n)]
    return xp, rng.randint(10, 2000)


def test_get_d_matches_bisection():
    rng = random.Random(7)
    for _ in range(100):
        xp, amp = _random_pool(rng)
        d = get_d(xp, amp)
        ref = _bisect_d(xp, amp)
        # Newton on integers may stop one or two units off the exact floor root.
        assert abs(d - ref) <= max(2, ref // 10**9), (xp, amp)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_get_d_balanced_pool_is_sum(n):
    xp = [123_456_789 * E6] * n
    assert get_d(xp, 200) == sum(xp)


def test_get_d_rejects_empty_coin():
    with pytest.raises(ZeroBalance):
        get_d([10**12, 0], 100)


def test_fee_free_exchange_preserves_invariant():
    rng = random.Random(11)
    for _ in range(100):
        n = rng.randint(2, 3)
        base = rng.randint(10**9, 10**12)
        xp = [int(base * rng.uniform(0.8, 1.25)) for _ in range(n)]
        amp = rng.randint(10, 2000)
        i, j = rng.sample(range(n), 2)
        dx = rng.randint(1_000, min(xp) // 10)
        before = get_d(xp, amp)
        dy = exchange_output(i, j, dx, xp, amp, fee=0)
        after_xp = list(xp)
        after_xp[i] += dx
        after_xp[j] -= dy
        after = get_d(after_xp, amp)
        # The pool keeps the rounding unit, so D may only creep upward.
        assert -2 <= after - before <= 4, (xp, amp, i, j, dx)


def test_get_y_inverts_exchange():
    xp = [100_000_000 * E6, 100_000_000 * E6]
    y = get_y(1, 0, xp[1] + 15_000_000 * E6, xp, 200)
    assert y < xp[0]
    assert xp[0] - y < 15_000_000 * E6 * 1001 // 1000
    with pytest.raises(ValueError):
        get_y(0, 0, 1, xp, 200)


def _bisect_y(j: int, xp: list[int], d: int, amp: int) -> int:
    """Smallest balance of coin j whose invariant residual at fixed D is non-positive."""
    lo, hi = 1, d * len(xp)
    while lo < hi:
        mid = (lo + hi) // 2
        trial = list(xp)
        trial[j] = mid
        if _residual_sign(d, trial, amp) <= 0:
            hi = mid
        else:
            lo = mid + 1
    return lo


def test_get_y_matches_bisection():
    rng = random.Random(5)
    for _ in range(100):
        xp, amp = _random_pool(rng)
        i, j = rng.sample(range(len(xp)), 2)
        x = xp[i] + rng.randint(1, xp[i] // 2)
        d = get_d(xp, amp)
        moved = list(xp)
        moved[i] = x
        ref = _bisect_y(j, moved, d, amp)
        y = get_y(i, j, x, xp, amp)
        assert abs(y - ref) <= max(2, ref // 10**9), (xp, amp, i, j, x)


def test_small_trade_on_balanced_pool_is_near_par():
    xp = [100_000_000 * E6, 100_000_000 * E6]
    dx = xp[0] // 10**6
    dy = exchange_output(0, 1, dx, xp, 200, fee=0)
    assert 0.999 < dy / dx < 1


def test_round_trip_never_gains():
    rng = random.Random(13)
    for _ in range(100):
        base = rng.randint(10**9, 10**14)
        xp = [int(base * rng.uniform(0.5, 2)), int(base * rng.uniform(0.5, 2))]
        amp = rng.randint(10, 2000)
        dx = rng.randint(1_000, min(xp) // 4)
        dy = exchange_output(0, 1, dx, xp, amp)
        after = [xp[0] + dx, xp[1] - dy]
        back = exchange_output(1, 0, dy, after, amp)
        assert back <= dx, (xp, amp, dx)


# ── Constant product ─────────────────────────────────────────

def test_amount_out_matches_hand_computation():
    # 1000 * 0.997 * 1e6 / (1e6 + 997) = 996.00...
    assert amount_out(1_000, 1_000_000, 1_000_000, fee=30) == 996
    assert amount_out(0, 1_000_000, 1_000_000) == 0
    assert amount_out(10, 0, 1_000_000) == 0


def test_liquidity_minted():
    assert liquidity_minted(4, 9, 0, 0, 0) == 6
    assert liquidity_minted(10, 30, 100, 200, 50) == min(10 * 50 // 100, 30 * 50 // 200)


def test_pair_swap_keeps_k_non_decreasing(warp_world):
    pair = warp_world.protocol("pair")
    r0, r1 = pair.reserves(warp_world)
    warp_world.call("pair.swap", "attacker", {"token_in": "DAI", "dx": 1_000_000 * E18})
    n0, n1 = pair.reserves(warp_world)
    assert n1 == r1 + 1_000_000 * E18
    assert n0 * n1 >= r0 * r1
    assert warp_world.state.balance_of("attacker", "WETH") == 500 * E18 + (r0 - n0)


def test_pair_swap_rejects_foreign_token(warp_world):
    before = warp_world.state.canonical_json()
    with pytest.raises(Revert, match="not traded"):
        warp_world.call("pair.swap", "attacker", {"token_in": "USDC", "dx": 1})
    assert warp_world.state.canonical_json() == before


# ── Vault ────────────────────────────────────────────────────

def test_oracle_valuation_is_principal_when_balanced():
    assert oracle_invested_balance(80 * E6, [5, 5], 0) == 80 * E6
    assert oracle_invested_balance(80 * E6, [4, 6], 0) == 80 * E6 * 2 * 4 // 10


def test_vault_deposit_then_withdraw_round_trips(harvest_world):
    vault = harvest_world.protocol("vault")
    shares = harvest_world.call("vault.deposit", "attacker", {"amount": 1_000 * E6})["shares"]
    # Balanced pool: value per share is exactly one.
    assert shares == 1_000 * E6
    assert harvest_world.state.balance_of("attacker", "fUSDC") == shares
    out = harvest_world.call("vault.withdraw", "attacker", {"shares": shares})["underlying"]
    assert out == 1_000 * E6
    assert vault.underlying_in_vault(harvest_world) == 20_000_000 * E6


def test_vault_invested_follows_pool_ratio(harvest_world):
    vault = harvest_world.protocol("vault")
    assert vault.invested(harvest_world) == 80_000_000 * E6
    harvest_world.call("ypool.exchange", "attacker", {"i": 1, "j": 0, "dx": 15_000_000 * E6})
    assert vault.invested(harvest_world) < 80_000_000 * E6


def test_vault_withdraw_beyond_holdings_reverts(harvest_world):
    with pytest.raises(Revert):
        harvest_world.call("vault.withdraw", "attacker", {"shares": 1})


def test_vault_admin_surface(harvest_world):
    with pytest.raises(Revert, match="rebalance disabled"):
        harvest_world.call("vault.rebalance", "keeper", {})
    with pytest.raises(Revert, match="only owner"):
        harvest_world.call("vault.set_strategy", "attacker", {"strategy": "evil"})
    harvest_world.call("vault.set_strategy", "harvest_governance", {"strategy": "v2"})
    assert harvest_world.read("vault.strategy_updates") == 1


def test_vault_claim_touches_caller_keyed_storage_only(harvest_world):
    with harvest_world.state.tracing() as log:
        harvest_world.call("vault.claim", "farmer", {})
    assert log.writes == {"vault.rewards:farmer"}


# ── Lending ──────────────────────────────────────────────────

def test_borrow_without_collateral_reverts(warp_world):
    with pytest.raises(Revert, match="borrow limit"):
        warp_world.call("market.borrow", "attacker", {"token": "USDC", "amount": 1})


def test_borrow_limit_tracks_lp_collateral(warp_world):
    market = warp_world.protocol("market")
    lp = warp_world.call("pair.mint_balanced", "attacker", {"amount0": 500 * E18})["liquidity"]
    warp_world.call("market.provide_collateral", "attacker", {"lp_amount": lp})
    # A third of the pool's LP at 3M DAI reserves: about 2M USD, 75% borrowable.
    limit = market.borrow_limit(warp_world, "attacker")
    assert 1_499_000 * E18 < limit <= 1_500_000 * E18

    warp_world.call("market.borrow", "attacker", {"token": "USDC", "amount": 1_000_000 * E6})
    assert warp_world.state.balance_of("attacker", "USDC") == 1_000_000 * E6
    assert market.debt_of(warp_world, "attacker") == 1_000_000 * E18
    with pytest.raises(Revert, match="borrow limit"):
        warp_world.call("market.borrow", "attacker", {"token": "DAI", "amount": 600_000 * E18})


def test_paused_protocol_reverts(harvest_world):
    harvest_world.state.set_var("ypool", "paused", 1)
    with pytest.raises(Revert, match="paused"):
        harvest_world.call("ypool.exchange", "attacker", {"i": 0, "j": 1, "dx": 1_000})


def test_borrow_limit_boundary_at_three_quarters(warp_world):
    # Two LP-value units per LP token: 500 LP is worth 1000 USD of collateral.
    warp_world.state.set_var("pair", "lp_total_supply", 2_000_000 * E18)
    warp_world.state.mint("attacker", "WETH-DAI-LP", 500 * E18)
    warp_world.call("market.provide_collateral", "attacker", {"lp_amount": 500 * E18})
    market = warp_world.protocol("market")
    assert market.lp_value(warp_world, 500 * E18) == 1_000 * E18
    assert market.borrow_limit(warp_world, "attacker") == 750 * E18

    with pytest.raises(Revert, match="borrow limit"):
        warp_world.call("market.borrow", "attacker", {"token": "USDC", "amount": 751 * E6})
    warp_world.call("market.borrow", "attacker", {"token": "USDC", "amount": 750 * E6})
    assert market.debt_of(warp_world, "attacker") == 750 * E18
