"""
Vectorsmith – Application configuration from environment variables
and run defaults from config/synthesis.yml.
"""

import os
from functools import lru_cache
from pathlib import Path

import yaml
from pydantic import BaseModel, Field, ValidationError

from app.exceptions import ConfigError

ROOT_DIR = Path(__file__).resolve().parent.parent
ENV_PREFIX = "VECTORSMITH_"


class Settings(BaseModel):
    """Application settings loaded from environment."""

    # App
    APP_NAME: str = "Vectorsmith"
    APP_VERSION: str = "1.0.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Benchmarks and run defaults
    BENCHMARK_DIR: str = str(ROOT_DIR / "app" / "benchmarks")
    SYNTHESIS_CONFIG_PATH: str = str(ROOT_DIR / "config" / "synthesis.yml")

    # Execution
    MAX_WORKERS: int = 0  # 0 = one per core, capped at 18
    RUN_TIMEOUT_SECONDS: float = 600.0
    DEFAULT_SEED: int = 0


# ── Run defaults (config/synthesis.yml) ──────────────────────

class _Section(BaseModel):
    model_config = {"extra": "forbid"}


class SamplerDefaults(_Section):
    initial_per_action: int = Field(200, gt=0)
    log_uniform: bool = False
    predecessor_probability: float = Field(0.5, ge=0, le=1)
    max_attempt_factor: int = Field(10, ge=1)


class ApproximatorDefaults(_Section):
    method: str = Field("poly", pattern="^(poly|inter|exact)$")
    degree: int = Field(2, ge=1, le=3)


class StrengthDefaults(_Section):
    points_per_dim: int = Field(gt=0)
    refinement_iterations: int = Field(ge=0)
    local_polish_budget: int = Field(gt=0)


class OptimizerDefaults(_Section):
    strengths: dict[int, StrengthDefaults] = {
        1: StrengthDefaults(points_per_dim=64, refinement_iterations=2, local_polish_budget=60),
        2: StrengthDefaults(points_per_dim=256, refinement_iterations=4, local_polish_budget=200),
        3: StrengthDefaults(points_per_dim=1024, refinement_iterations=8, local_polish_budget=600),
    }


class LoopDefaults(_Section):
    max_length: int = Field(4, ge=1)
    max_iterations: int = Field(3, ge=1)
    epsilon: float = Field(0.05, gt=0, lt=1)
    max_repeat: int | None = Field(None, ge=1)
    schedule: list[int] = [1, 2, 3]
    timeout_seconds: float = Field(600.0, gt=0)
    cegdc: bool = True


class TraceminerDefaults(_Section):
    max_choices: int = Field(20, ge=1)
    probe_amount: int = Field(1000, gt=0)


class SynthesisDefaults(_Section):
    sampler: SamplerDefaults = SamplerDefaults()
    approximator: ApproximatorDefaults = ApproximatorDefaults()
    optimizer: OptimizerDefaults = OptimizerDefaults()
    synthesis: LoopDefaults = LoopDefaults()
    traceminer: TraceminerDefaults = TraceminerDefaults()


def load_synthesis_defaults(path: str | Path | None = None) -> SynthesisDefaults:
    """Parse the run defaults file; a missing file yields built-in defaults."""
    path = Path(path or get_settings().SYNTHESIS_CONFIG_PATH)
    if not path.exists():
        return SynthesisDefaults()
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError([f"{path}: {e}"]) from e
    try:
        return SynthesisDefaults.model_validate(data)
    except ValidationError as e:
        raise ConfigError([
            f"{path}: {'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        ]) from e


# ── Environment ──────────────────────────────────────────────

def _load_dotenv():
    """Load .env from the project root without overriding the real environment."""
    env_path = ROOT_DIR / ".env"
    if env_path.exists():
        for line in env_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#") and "=" in line:
                key, val = line.split("=", 1)
                os.environ.setdefault(key.strip(), val.strip())


_load_dotenv()


def _env(name: str, default: str) -> str:
    return os.getenv(ENV_PREFIX + name, default)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance, populated from VECTORSMITH_* env vars."""
    defaults = Settings()
    return Settings(
        DEBUG=_env("DEBUG", "false").lower() in ("1", "true", "yes"),
        LOG_LEVEL=_env("LOG_LEVEL", defaults.LOG_LEVEL).upper(),
        BENCHMARK_DIR=_env("BENCHMARK_DIR", defaults.BENCHMARK_DIR),
        SYNTHESIS_CONFIG_PATH=_env("SYNTHESIS_CONFIG_PATH", defaults.SYNTHESIS_CONFIG_PATH),
        MAX_WORKERS=int(_env("MAX_WORKERS", str(defaults.MAX_WORKERS))),
        RUN_TIMEOUT_SECONDS=float(_env("RUN_TIMEOUT_SECONDS", str(defaults.RUN_TIMEOUT_SECONDS))),
        DEFAULT_SEED=int(_env("DEFAULT_SEED", str(defaults.DEFAULT_SEED))),
    )
