import asyncio
import logging
import os
from contextlib import asynccontextmanager
from typing import Any

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from errors import ConfigurationError
from harness import (
    Algorithm,
    ExperimentSpec,
    SummaryRow,
    TimingRow,
    compare_time,
    run_experiment,
)
from membrane_engine import GlobalRegion, PmsamConfig, check_config, execute, run_pmsam
from monkey_core import MaParams, RunReport, run_ma
from objective import ObjectiveDescriptor, builtin_suite, get_objective, known_ids

load_dotenv()

logging.basicConfig(
    level=os.environ.get("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("pmsam.service")

FRONTEND_ORIGINS = os.environ.get("FRONTEND_ORIGINS", "")
WORKERS = int(os.environ.get("PMSAM_WORKERS", "1"))


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info(f"Starting optimizer service with {WORKERS} worker(s)...")
    logger.info(f"Objectives available: {', '.join(known_ids())}")
    yield
    logger.info("Shutting down...")


app = FastAPI(title="PMSAM API", version="0.1.0", lifespan=lifespan)

allowed_origins = [
    origin.strip() for origin in FRONTEND_ORIGINS.split(",") if origin.strip()
] or ["*"]
app.add_middleware(
    CORSMiddleware,
    allow_origins=allowed_origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(RequestValidationError)
async def validation_error_handler(request: Request, exc: RequestValidationError) -> JSONResponse:
    logger.info(f"[Request] rejected {request.url.path}: {len(exc.errors())} invalid field(s)")
    return JSONResponse(status_code=400, content={"detail": jsonable_encoder(exc.errors())})


def _run_pmsam_sync(desc: ObjectiveDescriptor, config: PmsamConfig) -> RunReport:
    """Run PMSAM on its own event loop in a worker thread."""
    return asyncio.run(run_pmsam(desc, config, workers=WORKERS))


def _trace_sync(desc: ObjectiveDescriptor, config: PmsamConfig) -> GlobalRegion:
    return asyncio.run(execute(desc, config, WORKERS))


def _resolve(function_id: str, d: int):
    try:
        return get_objective(function_id, d)
    except ConfigurationError as e:
        raise HTTPException(status_code=404, detail=str(e))


@app.get("/health")
async def health_check() -> dict[str, str]:
    return {"status": "ok"}


@app.get("/functions")
async def list_functions(d: int = 30) -> list[dict[str, Any]]:
    if d < 1:
        raise HTTPException(status_code=400, detail="d must be at least 1")
    return [
        {
            "id": desc.id,
            "name": desc.name,
            "dimension": desc.dimension,
            "lower": desc.lower,
            "upper": desc.upper,
            "known_min": desc.known_min,
            "stochastic": desc.stochastic,
        }
        for desc in builtin_suite(d)
    ]


class RunRequest(BaseModel):
    function_id: str = "f1"
    algorithm: Algorithm = Algorithm.PMSAM
    config: PmsamConfig = Field(default_factory=PmsamConfig)


@app.post("/run")
async def run_once(request: RunRequest) -> RunReport:
    """
    One seeded run. The seed comes from the config; `both` is not a single run.
    """
    if request.algorithm is Algorithm.BOTH:
        raise HTTPException(status_code=400, detail="algorithm must be ma or pmsam for /run")
    desc = _resolve(request.function_id, request.config.ma.d)
    try:
        config = check_config(request.config)
    except ConfigurationError as e:
        raise HTTPException(status_code=400, detail=str(e))
    logger.info(f"[Request] run {desc.id} with {request.algorithm.value} seed={config.seed}")
    if request.algorithm is Algorithm.MA:
        return await asyncio.to_thread(run_ma, desc, config.ma, config.seed)
    return await asyncio.to_thread(_run_pmsam_sync, desc, config)


@app.post("/experiment")
async def run_experiment_endpoint(spec: ExperimentSpec) -> list[SummaryRow]:
    for fid in spec.function_ids:
        _resolve(fid, spec.config.ma.d)
    try:
        rows, _ = await run_experiment(spec, WORKERS)
    except ConfigurationError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return rows


@app.get("/compare")
async def compare_endpoint(
    n: list[int] = Query(default=[]), m: int = 4, measure: bool = False
) -> list[TimingRow]:
    n_values = n or [20, 40, 80, 160]
    if m < 1 or any(value < m for value in n_values):
        raise HTTPException(status_code=400, detail="need 1 <= m <= n for every n")
    return await compare_time(n_values, m, MaParams(), measure=measure)


@app.get("/trace")
async def trace_endpoint(
    function_id: str = "f1", seed: int = Query(0, ge=0)
) -> list[dict[str, Any]]:
    config = PmsamConfig(ma=MaParams(n=20, cyclic_number=1), membranes=4, seed=seed)
    region = await asyncio.to_thread(_trace_sync, _resolve(function_id, config.ma.d), config)
    return [
        {"iteration": e.iteration, "phase": e.phase, "t": e.t, "membranes": e.membranes}
        for e in region.log
    ]


def main() -> None:
    import uvicorn

    port = int(os.environ.get("PORT", "8000"))
    uvicorn.run("main:app", host="0.0.0.0", port=port, reload=False)


if __name__ == "__main__":
    main()
