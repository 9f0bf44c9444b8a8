"""
Vectorsmith – Protocol model base class.

A protocol object is stateless: every member variable lives in the world's
LedgerState under (protocol id, name), so snapshot/restore and cloning cover
protocol state for free. Callable methods are tagged with @action, derived
read-only values with @view.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import TYPE_CHECKING, Any, Callable, ClassVar

from app.exceptions import ConfigError, Revert
from app.models.benchmark import parse_amount
from app.models.ledger import LedgerState

if TYPE_CHECKING:
    from app.services.world import World


@dataclass(frozen=True)
class ActionMeta:
    name: str
    params: tuple[str, ...]
    writes: tuple[str, ...]  # fnmatch patterns over this protocol's state names


@dataclass(frozen=True)
class ViewMeta:
    name: str
    assignable: bool


def action(*, writes: tuple[str, ...] = ()) -> Callable:
    def wrap(fn):
        fn.__vs_action__ = tuple(writes)
        return fn
    return wrap


def view(*, assignable: bool = False) -> Callable:
    def wrap(fn):
        fn.__vs_view__ = assignable
        return fn
    return wrap


class Protocol:
    """Base for executable protocol models."""

    kind: ClassVar[str] = ""
    _actions: ClassVar[dict[str, ActionMeta]]
    _views: ClassVar[dict[str, ViewMeta]]

    def __init__(self, pid: str):
        self.pid = pid
        # The protocol's token-holding account shares its id.
        self.account = pid

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        actions: dict[str, ActionMeta] = {}
        views: dict[str, ViewMeta] = {}
        for name, fn in inspect.getmembers(cls, inspect.isfunction):
            if hasattr(fn, "__vs_action__"):
                sig = list(inspect.signature(fn).parameters)[3:]  # self, world, caller
                actions[name] = ActionMeta(name, tuple(sig), fn.__vs_action__)
            elif hasattr(fn, "__vs_view__"):
                views[name] = ViewMeta(name, fn.__vs_view__)
        cls._actions = actions
        cls._views = views

    # ── Construction ──────────────────────────────────────────
    @classmethod
    def from_config(cls, pid: str, cfg: dict[str, Any], state: LedgerState) -> "Protocol":
        raise NotImplementedError

    @staticmethod
    def _require(cfg: dict[str, Any], key: str, pid: str) -> Any:
        if key not in cfg:
            raise ConfigError(f"protocols.{pid}.{key}: field required")
        return cfg[key]

    @staticmethod
    def _amount(value: Any, where: str) -> int:
        try:
            return parse_amount(value)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None

    # ── Introspection ─────────────────────────────────────────
    @classmethod
    def actions(cls) -> dict[str, ActionMeta]:
        return cls._actions

    @classmethod
    def views(cls) -> dict[str, ViewMeta]:
        return cls._views

    def view_dependencies(self, name: str) -> tuple[str, ...]:
        """Full state refs (fnmatch patterns) a view is computed from."""
        return ()

    def has_state(self, state: LedgerState, name: str) -> bool:
        return name in self._views or state.has_var(self.pid, name)

    # ── State access ──────────────────────────────────────────
    def get(self, world: "World", name: str) -> int:
        return world.state.get_var(self.pid, name)

    def set(self, world: "World", name: str, value: int):
        world.state.set_var(self.pid, name, value)

    def read(self, world: "World", name: str) -> int:
        if name in self._views:
            return getattr(self, name)(world)
        return self.get(world, name)

    def assign(self, world: "World", name: str, value: int):
        """Overwrite a state value inside an estimation sandbox."""
        if name in self._views:
            if not self._views[name].assignable:
                raise ValueError(f"{self.pid}.{name} is derived and cannot be assigned")
            getattr(self, f"_assign_{name}")(world, value)
        else:
            self.set(world, name, value)

    def is_assignable(self, state: LedgerState, name: str) -> bool:
        if name in self._views:
            return self._views[name].assignable
        return state.has_var(self.pid, name)

    def may_write(self, method: str, name: str) -> bool:
        return any(fnmatchcase(name, pat) for pat in self._actions[method].writes)

    def require_active(self, world: "World"):
        if world.state.get_var_or(self.pid, "paused") != 0:
            raise Revert(f"{self.pid} is paused")

    def call(self, world: "World", caller: str, method: str, kwargs: dict[str, Any]) -> dict[str, Any]:
        if method not in self._actions:
            raise Revert(f"{self.pid} has no callable method {method!r}")
        return getattr(self, method)(world, caller, **kwargs) or {}
