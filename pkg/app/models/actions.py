"""
Vectorsmith – Action candidates, symbolic vectors and concrete attack vectors.

An ActionSpec is the contract between a protocol method and the synthesis
pipeline: which state the method reads (prestates), which state it changes
(poststates), which tokens it moves for the caller and which of its integer
arguments the optimizer is free to choose.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Iterable, Mapping

from app.exceptions import SpecValidationError

if TYPE_CHECKING:
    from app.services.world import World


@dataclass(frozen=True)
class SymbolicParam:
    name: str
    lower: int
    upper: int

    @property
    def span(self) -> int:
        return self.upper - self.lower


@dataclass(frozen=True)
class ActionSpec:
    id: str
    target: str
    params: tuple[SymbolicParam, ...] = ()
    fixed_args: tuple[tuple[str, Any], ...] = ()
    prestates: tuple[str, ...] = ()
    poststates: tuple[str, ...] = ()
    tokens_in: tuple[str, ...] = ()
    tokens_out: tuple[str, ...] = ()
    approximate: bool = True

    @classmethod
    def build(cls, id: str, target: str, params: Iterable[SymbolicParam] = (),
              fixed_args: Mapping[str, Any] | None = None, prestates: Iterable[str] = (),
              poststates: Iterable[str] = (), tokens_in: Iterable[str] = (),
              tokens_out: Iterable[str] = (), approximate: bool = True) -> "ActionSpec":
        return cls(
            id=id, target=target, params=tuple(params),
            fixed_args=tuple(sorted((fixed_args or {}).items())),
            prestates=tuple(prestates), poststates=tuple(poststates),
            tokens_in=tuple(tokens_in), tokens_out=tuple(tokens_out),
            approximate=approximate,
        )

    @property
    def protocol_id(self) -> str:
        return self.target.split(".", 1)[0]

    @property
    def method(self) -> str:
        return self.target.split(".", 1)[1] if "." in self.target else ""

    @property
    def fixed(self) -> dict[str, Any]:
        return dict(self.fixed_args)

    @property
    def flow_tokens(self) -> tuple[str, ...]:
        """Tokens whose caller balance the action changes, in declaration order."""
        return tuple(dict.fromkeys(self.tokens_in + self.tokens_out))

    @property
    def input_names(self) -> tuple[str, ...]:
        return self.prestates + tuple(p.name for p in self.params)

    @property
    def output_names(self) -> tuple[str, ...]:
        return self.poststates + tuple(f"delta:{t}" for t in self.flow_tokens)

    def kwargs(self, values: Iterable[int]) -> dict[str, Any]:
        values = tuple(values)
        if len(values) != len(self.params):
            raise ValueError(f"{self.id}: expected {len(self.params)} parameters, got {len(values)}")
        args = self.fixed
        args.update({p.name: int(v) for p, v in zip(self.params, values)})
        return args

    def clamp(self, values: Iterable[int]) -> tuple[int, ...]:
        return tuple(min(max(int(v), p.lower), p.upper) for p, v in zip(self.params, values))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "target": self.target,
            "fixed_args": self.fixed,
            "params": [{"name": p.name, "lower": p.lower, "upper": p.upper} for p in self.params],
            "prestates": list(self.prestates),
            "poststates": list(self.poststates),
            "tokens_in": list(self.tokens_in),
            "tokens_out": list(self.tokens_out),
            "approximate": self.approximate,
        }


@dataclass(frozen=True)
class SymbolicVector:
    actions: tuple[ActionSpec, ...]

    def __post_init__(self):
        if not self.actions:
            raise ValueError("a symbolic vector needs at least one action")

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.actions)

    @property
    def dim(self) -> int:
        return sum(len(a.params) for a in self.actions)

    def split(self, flat: Iterable[int]) -> list[tuple[int, ...]]:
        """Cut a flat parameter vector into per-action tuples."""
        flat = list(flat)
        out, pos = [], 0
        for a in self.actions:
            out.append(tuple(flat[pos:pos + len(a.params)]))
            pos += len(a.params)
        return out

    def label(self) -> str:
        return " -> ".join(self.ids)


class AttackStatus(str, enum.Enum):
    CANDIDATE = "candidate"
    VALIDATED = "validated"
    COUNTEREXAMPLE = "counterexample"
    REVERTED = "reverted"


@dataclass
class AttackVector:
    steps: list[tuple[ActionSpec, tuple[int, ...]]]
    estimated_profit: Fraction
    actual_profit: Fraction | None = None
    status: AttackStatus = AttackStatus.CANDIDATE
    executed_prefix: int = 0
    revert_reason: str | None = None
    per_token: dict[str, int] = field(default_factory=dict)

    @property
    def vector(self) -> SymbolicVector:
        return SymbolicVector(tuple(spec for spec, _ in self.steps))

    def to_dict(self) -> dict[str, Any]:
        return {
            "actions": [{"id": spec.id, "params": [str(v) for v in values]} for spec, values in self.steps],
            "estimated_profit": _fraction_str(self.estimated_profit),
            "actual_profit": None if self.actual_profit is None else _fraction_str(self.actual_profit),
            "status": self.status.value,
            "executed_prefix": self.executed_prefix,
            "revert_reason": self.revert_reason,
            "per_token": {k: str(v) for k, v in sorted(self.per_token.items())},
        }


def _fraction_str(value: Fraction) -> str:
    value = Fraction(value)
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


# ── Validation ────────────────────────────────────────────────

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _poststate_writable(world: "World", spec: ActionSpec, ref: str) -> bool:
    proto = world.protocol(spec.protocol_id)
    pid, name = world.split_ref(ref)
    if pid == spec.protocol_id and proto.may_write(spec.method, name):
        return True
    # A derived value counts as written when it is computed from written state.
    owner = world.protocol(pid)
    writes = [f"{spec.protocol_id}.{w}" for w in proto.actions()[spec.method].writes]
    for dep in owner.view_dependencies(name):
        if any(fnmatchcase(w, dep) or fnmatchcase(dep, w) for w in writes):
            return True
    return False


def validate_spec(spec: ActionSpec, world: "World") -> list[str]:
    """Check a spec against the world it targets; an empty list means valid."""
    errors: list[str] = []
    if spec.protocol_id not in world.protocols:
        return [f"UnknownTarget: protocol {spec.protocol_id!r} does not exist"]
    proto = world.protocol(spec.protocol_id)
    meta = proto.actions().get(spec.method)
    if meta is None:
        return [f"UnknownTarget: {spec.protocol_id} has no callable method {spec.method!r}"]

    names = [p.name for p in spec.params]
    for name in sorted({n for n in names if names.count(n) > 1} | (set(names) & set(spec.fixed))):
        errors.append(f"DuplicateParam: {name!r} is declared more than once")
    for p in spec.params:
        if not _IDENT.match(p.name):
            errors.append(f"BadParam: {p.name!r} is not an identifier")
        if p.lower <= 0:
            errors.append(f"BadBounds: {p.name} lower bound must be > 0, got {p.lower}")
        if p.lower > p.upper:
            errors.append(f"BadBounds: {p.name} lower bound {p.lower} exceeds upper {p.upper}")

    declared = set(names) | set(spec.fixed)
    expected = set(meta.params)
    if declared != expected:
        missing = sorted(expected - declared)
        extra = sorted(declared - expected)
        errors.append(f"ArityMismatch: {spec.target} takes {list(meta.params)}; "
                      f"missing {missing}, unexpected {extra}")

    for ref in spec.prestates + spec.poststates:
        if not world.has_ref(ref):
            errors.append(f"UnknownStateVar: {ref}")
    for ref in spec.poststates:
        if world.has_ref(ref) and not _poststate_writable(world, spec, ref):
            errors.append(f"NotWritable: {spec.target} never writes {ref}")
    for token in spec.tokens_in + spec.tokens_out:
        if token not in world.state.tokens:
            errors.append(f"UnknownToken: {token}")
    return errors


def ensure_valid(spec: ActionSpec, world: "World") -> ActionSpec:
    errors = validate_spec(spec, world)
    if errors:
        raise SpecValidationError(spec.id, errors)
    return spec


def read_states(spec: ActionSpec, world: "World") -> tuple[int, ...]:
    return tuple(world.read(ref) for ref in spec.prestates)
