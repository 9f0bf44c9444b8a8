"""
Vectorsmith - FastAPI application entry point.

JSON API over the bundled benchmarks and the synthesis pipeline.
"""

import logging
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI

from app.config import get_settings
from app.routers import synthesis
from app.services.benchmarks import bundled_benchmarks
from app.services.run_monitor import SystemSnapshot, default_workers

settings = get_settings()

logging.basicConfig(
    level=logging.DEBUG if settings.DEBUG else getattr(logging, settings.LOG_LEVEL, logging.INFO),
    format="%(levelname)s | %(message)s",
)
logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Startup / shutdown events."""
    logger.info("Vectorsmith %s starting (benchmarks in %s)", settings.APP_VERSION, settings.BENCHMARK_DIR)
    yield
    logger.info("Vectorsmith shutting down")


app = FastAPI(
    title="Vectorsmith",
    description="Counterexample-guided synthesis of flash-loan attack vectors",
    version=settings.APP_VERSION,
    lifespan=lifespan,
)

app.include_router(synthesis.router)


# ── Health Check ─────────────────────────────────────────────

@app.get("/health")
def health():
    """Lightweight health check."""
    system = SystemSnapshot.take()
    return {
        "status": "ok",
        "version": settings.APP_VERSION,
        "benchmarks": len(bundled_benchmarks(Path(settings.BENCHMARK_DIR))),
        "workers": settings.MAX_WORKERS or default_workers(),
        "cpu_count": system.cpu_count,
        "memory_percent": system.memory_percent,
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("app.main:app", host="0.0.0.0", port=8000, reload=True)
