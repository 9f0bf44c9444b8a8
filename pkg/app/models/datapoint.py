"""
Vectorsmith – Data points: one observed input/output pair of an action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from pydantic import BaseModel, Field


@dataclass(frozen=True)
class DataPoint:
    prestates: tuple[int, ...]
    params: tuple[int, ...]
    poststates: tuple[int, ...] = ()
    token_deltas: tuple[int, ...] = ()
    reverted: bool = False

    def __post_init__(self):
        if self.reverted and (self.poststates or self.token_deltas):
            raise ValueError("reverted data points carry no outputs")

    @property
    def inputs(self) -> tuple[int, ...]:
        return self.prestates + self.params

    @property
    def outputs(self) -> tuple[int, ...]:
        return self.poststates + self.token_deltas

    def to_json(self) -> dict:
        return {
            "prestates": list(self.prestates),
            "params": list(self.params),
            "poststates": list(self.poststates),
            "token_deltas": list(self.token_deltas),
            "reverted": self.reverted,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DataPoint":
        return cls(
            prestates=tuple(int(v) for v in data["prestates"]),
            params=tuple(int(v) for v in data["params"]),
            poststates=tuple(int(v) for v in data.get("poststates", ())),
            token_deltas=tuple(int(v) for v in data.get("token_deltas", ())),
            reverted=bool(data.get("reverted", False)),
        )


class SampleBudget(BaseModel):
    initial_per_action: int = Field(200, gt=0)
    seed: int = 0
    log_uniform: bool = False
    predecessor_probability: float = Field(0.5, ge=0.0, le=1.0)
    max_attempt_factor: int = Field(10, gt=0)


def dump_points(points: dict[str, list[DataPoint]], path: str | Path):
    """One JSON object per line: {"action": id, ...point}. Actions in sorted order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for action_id in sorted(points):
            for p in points[action_id]:
                fh.write(json.dumps({"action": action_id, **p.to_json()}, sort_keys=True) + "\n")


def load_points(path: str | Path) -> dict[str, list[DataPoint]]:
    out: dict[str, list[DataPoint]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            out.setdefault(row.pop("action"), []).append(DataPoint.from_json(row))
    return out


def count_points(points: dict[str, Iterable[DataPoint]]) -> dict[str, int]:
    return {k: sum(1 for _ in v) for k, v in sorted(points.items())}
