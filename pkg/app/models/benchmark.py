"""
Vectorsmith – Benchmark file schema.

Benchmarks are YAML documents validated with pydantic. Amounts are base-unit
integers; strings such as "2_900_030e18" are accepted and converted exactly.
"""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Annotated, Any, Union

from pydantic import BaseModel, BeforeValidator, Field, field_validator, model_validator

_AMOUNT = re.compile(r"^\s*([0-9][0-9_]*(?:\.[0-9_]+)?)(?:e([0-9]+))?\s*$")
_CAPITAL = re.compile(r"^\s*(?:([0-9]+(?:\.[0-9]+)?)\s*\*\s*)?capital\s*$")


def parse_amount(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError("amount must be an integer")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        m = _AMOUNT.match(value)
        if m:
            mantissa = Fraction(m.group(1).replace("_", ""))
            exact = mantissa * 10 ** int(m.group(2) or 0)
            if exact.denominator == 1:
                return int(exact)
        raise ValueError(f"not an exact integer amount: {value!r}")
    raise ValueError(f"amount must be an integer or numeric string, got {type(value).__name__}")


def parse_price(value: Any) -> Fraction:
    if isinstance(value, bool):
        raise ValueError("price must be numeric")
    try:
        return Fraction(Decimal(str(value))) if not isinstance(value, Fraction) else value
    except (InvalidOperation, ValueError):
        try:
            return Fraction(str(value))
        except ValueError:
            raise ValueError(f"bad price {value!r}") from None


Amount = Annotated[int, BeforeValidator(parse_amount)]


def _parse_upper(value: Any) -> Union[int, str]:
    if isinstance(value, str) and _CAPITAL.match(value):
        return value.strip()
    return parse_amount(value)


UpperBound = Annotated[Union[int, str], BeforeValidator(_parse_upper)]


def capital_multiple(upper: str) -> Fraction:
    m = _CAPITAL.match(upper)
    if not m:
        raise ValueError(f"not a capital expression: {upper!r}")
    return Fraction(m.group(1) or 1)


class TokenConfig(BaseModel):
    decimals: int = Field(ge=0, le=18)
    # None marks an unpriced token (e.g. an LP receipt); its balance is worth 0.
    price: Annotated[Fraction, BeforeValidator(parse_price)] | None = None

    model_config = {"arbitrary_types_allowed": True}


class AdversaryConfig(BaseModel):
    account: str = "attacker"
    capital: dict[str, Amount]


class ParamConfig(BaseModel):
    name: str
    lower: Amount = 1
    upper: UpperBound | None = None


class ActionConfig(BaseModel):
    id: str
    target: str
    fixed_args: dict[str, Any] = {}
    params: list[ParamConfig] = []
    prestates: list[str] = []
    poststates: list[str] = []
    tokens_in: list[str] = []
    tokens_out: list[str] = []
    approximate: bool = True

    @field_validator("target")
    @classmethod
    def _target_shape(cls, v: str) -> str:
        if v.count(".") != 1 or v.startswith(".") or v.endswith("."):
            raise ValueError("target must look like <protocol>.<method>")
        return v


class GroundTruthStep(BaseModel):
    action: str
    params: list[Amount] = []


class BenchmarkConfig(BaseModel):
    name: str
    description: str = ""
    tokens: dict[str, TokenConfig]
    protocols: dict[str, dict[str, Any]]
    adversary: AdversaryConfig
    holders: dict[str, dict[str, Amount]] = {}
    actions: list[ActionConfig]
    ground_truth: list[GroundTruthStep] | None = None
    max_length: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _cross_check(self) -> "BenchmarkConfig":
        errors = []
        for sym, amount in self.adversary.capital.items():
            if sym not in self.tokens:
                errors.append(f"adversary.capital.{sym}: unknown token")
            elif self.tokens[sym].price is None:
                errors.append(f"tokens.{sym}.price: adversary capital token needs a price")
            if amount < 0:
                errors.append(f"adversary.capital.{sym}: must be >= 0")
        for pid, cfg in self.protocols.items():
            if "kind" not in cfg:
                errors.append(f"protocols.{pid}.kind: field required")
        ids = [a.id for a in self.actions]
        for dup in sorted({i for i in ids if ids.count(i) > 1}):
            errors.append(f"actions.{dup}: duplicate id")
        for a in self.actions:
            for t in a.tokens_in + a.tokens_out:
                if t not in self.tokens:
                    errors.append(f"actions.{a.id}.tokens: unknown token {t!r}")
        for k, step in enumerate(self.ground_truth or []):
            if step.action not in ids:
                errors.append(f"ground_truth.{k}.action: unknown action {step.action!r}")
        for account, balances in self.holders.items():
            for sym in balances:
                if sym not in self.tokens:
                    errors.append(f"holders.{account}.{sym}: unknown token")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    def prices(self) -> dict[str, Fraction]:
        return {sym: t.price for sym, t in self.tokens.items() if t.price is not None}
