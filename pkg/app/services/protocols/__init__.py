"""
Vectorsmith – Protocol models and the kind registry used by benchmark loading.
"""

from app.services.protocols.base import ActionMeta, Protocol, ViewMeta, action, view
from app.services.protocols.constant_product import ConstantProductPool
from app.services.protocols.lending import LendingMarket
from app.services.protocols.stableswap import StableSwapPool
from app.services.protocols.vault import Vault

PROTOCOL_KINDS: dict[str, type[Protocol]] = {
    cls.kind: cls for cls in (StableSwapPool, ConstantProductPool, Vault, LendingMarket)
}

__all__ = [
    "ActionMeta", "Protocol", "ViewMeta", "action", "view",
    "ConstantProductPool", "LendingMarket", "StableSwapPool", "Vault", "PROTOCOL_KINDS",
]
