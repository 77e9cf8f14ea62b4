import logging
import os
import time
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware

from oqw.qcore.main import (
    DEFAULT_POLICY,
    BudgetExceededError,
    CriterionUnavailableError,
    OQWError,
    ValidationReport,
    validate_coin,
)
from oqw.cli.main import CoinSpecFile, ReproduceRow, classify_coin, reproduce, verdict_document
from oqw.cli.registry import REGISTRY, build_fixture


# ---------- Логирование ----------

logging.basicConfig(
    level=os.getenv("OQW_LOG_LEVEL", "INFO"),
    format="%(asctime)s [%(levelname)s] [api] %(message)s",
)
logger = logging.getLogger("oqw-api")

app = FastAPI(title="OQW recurrence service")

# ---------- CORS ----------

CORS_ORIGINS = [o.strip() for o in os.getenv("OQW_CORS_ORIGINS", "*").split(",") if o.strip()]

app.add_middleware(
    CORSMiddleware,
    allow_origins=CORS_ORIGINS,
    allow_credentials=False,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ---------- Middleware: лог всех запросов ----------


@app.middleware("http")
async def log_requests(request: Request, call_next):
    start = time.perf_counter()
    try:
        response = await call_next(request)
    except Exception:
        logger.exception("Unhandled error during request %s %s", request.method, request.url.path)
        raise
    duration_ms = (time.perf_counter() - start) * 1000
    logger.info(
        "%s %s -> %d (%.2f ms)",
        request.method,
        request.url.path,
        response.status_code,
        duration_ms,
    )
    return response


# ---------- Ошибки ----------


def to_http(exc: OQWError) -> HTTPException:
    """Ошибки пакета -> HTTP: 409 бюджет, 422 нет критерия, остальное 400."""
    if isinstance(exc, BudgetExceededError):
        code = 409
    elif isinstance(exc, CriterionUnavailableError):
        code = 422
    else:
        code = 400
    logger.warning("request rejected (%d): %s", code, exc.detail)
    return HTTPException(status_code=code, detail=exc.detail)


# ---------- Эндпоинты ----------


@app.get("/health")
def health():
    return {"service": "oqw", "status": "ok"}


@app.get("/examples")
def list_examples() -> List[Dict[str, Any]]:
    return [
        {"id": e.id, "title": e.title, "cases": [c.name for c in e.cases]}
        for e in REGISTRY.values()
    ]


@app.get("/fixtures/{name}", response_model=CoinSpecFile)
def get_fixture(name: str):
    try:
        coin = build_fixture(name)
    except KeyError:
        raise HTTPException(status_code=404, detail="Fixture not found")
    return CoinSpecFile.from_coin(coin, metadata={"fixture": name})


@app.post("/validate", response_model=ValidationReport)
def validate(spec: CoinSpecFile):
    try:
        return validate_coin(spec.to_coin(), DEFAULT_POLICY)
    except OQWError as e:
        raise to_http(e)


@app.post("/classify")
def classify(spec: CoinSpecFile, tolerance: Optional[float] = None):
    policy = DEFAULT_POLICY if tolerance is None else DEFAULT_POLICY.with_zero_threshold(tolerance)
    try:
        verdict = classify_coin(spec.to_coin(), policy)
    except OQWError as e:
        raise to_http(e)
    logger.info("classified %s coin of dim %d: %s", spec.kind, spec.dimension, verdict.kind.value)
    return verdict_document(verdict)


@app.get("/reproduce/{example_id}", response_model=List[ReproduceRow])
def reproduce_example(example_id: str):
    if example_id != "all" and example_id not in REGISTRY:
        raise HTTPException(status_code=404, detail="Example not found")
    return reproduce(example_id)
