"""
Vectorsmith – Run monitoring.

Tracks, per synthesis run:
  - Wall-clock time per phase (collect, fit, enumerate, optimize, ...)
  - Counters (objective evaluations, counterexamples, reverts, dropped vectors)
  - A system snapshot (CPU cores, memory) taken when the run starts

Everything here lands in the report's "timing" section, which is not part
of the determinism contract.
"""

import logging
import os
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field

import psutil

logger = logging.getLogger(__name__)

MAX_DEFAULT_WORKERS = 18


def default_workers() -> int:
    """Worker processes when none are configured: one per core, capped."""
    cores = psutil.cpu_count(logical=True) or os.cpu_count() or 1
    return max(1, min(cores, MAX_DEFAULT_WORKERS))


@dataclass
class SystemSnapshot:
    cpu_count: int = 0
    memory_total_mb: float = 0.0
    memory_percent: float = 0.0

    @classmethod
    def take(cls) -> "SystemSnapshot":
        mem = psutil.virtual_memory()
        return cls(
            cpu_count=psutil.cpu_count(logical=True) or 1,
            memory_total_mb=round(mem.total / (1024 * 1024), 1),
            memory_percent=round(mem.percent, 1),
        )


@dataclass
class RunStats:
    phases: dict[str, float] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    total_seconds: float = 0.0
    system: SystemSnapshot = field(default_factory=SystemSnapshot)

    def to_dict(self) -> dict:
        return {
            "phases": {k: round(v, 3) for k, v in sorted(self.phases.items())},
            "counters": dict(sorted(self.counters.items())),
            "total_seconds": round(self.total_seconds, 3),
            "system": {
                "cpu_count": self.system.cpu_count,
                "memory_total_mb": self.system.memory_total_mb,
                "memory_percent": self.system.memory_percent,
            },
        }


class RunMonitor:
    """Per-run timers and counters. One monitor per run; not shared across processes."""

    def __init__(self):
        self._start = time.monotonic()
        self._phases: dict[str, float] = {}
        self._counters: Counter[str] = Counter()
        try:
            self._system = SystemSnapshot.take()
        except (OSError, RuntimeError) as e:
            logger.debug("System snapshot unavailable: %s", e)
            self._system = SystemSnapshot(cpu_count=os.cpu_count() or 1)

    @contextmanager
    def phase(self, name: str):
        """Time a block; repeated phases accumulate."""
        logger.debug("Phase %s started", name)
        t0 = time.monotonic()
        try:
            yield
        finally:
            elapsed = time.monotonic() - t0
            self._phases[name] = self._phases.get(name, 0.0) + elapsed
            logger.info("Phase %s finished in %.2fs", name, elapsed)

    def count(self, name: str, amount: int = 1):
        self._counters[name] += amount

    def counter(self, name: str) -> int:
        return self._counters[name]

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self._start

    def get_stats(self) -> RunStats:
        return RunStats(
            phases=dict(self._phases),
            counters=dict(self._counters),
            total_seconds=self.elapsed,
            system=self._system,
        )
