from typing import Any, Dict
import logging

from fastapi import Body, Depends, FastAPI, HTTPException

from src.api.deps import get_runner
from src.api.schemas import SystemInfo, SystemsResponse, ValidateResponse
from src.errors import ConfigError, UsageError, VmpcError
from src.harness.config import CONTROLLED, MULTIRATE, ExperimentConfig, validation_errors
from src.harness.runner import ExperimentRunner
from src.models.benchmarks import SYSTEMS
from src.records import RunSummaryRecord

logger = logging.getLogger(__name__)

app = FastAPI(title="Variational MPC API")


@app.get("/")
def root():
    return {"message": "Variational MPC API is running. Visit /docs"}


@app.get("/health")
def health():
    return {"status": "ok"}


@app.get("/systems", response_model=SystemsResponse)
def systems():
    infos = []
    for name, make in SYSTEMS.items():
        sys = make()
        infos.append(
            SystemInfo(
                name=name,
                n_q=sys.n_q,
                n_u=sys.n_u,
                n_x=sys.n_x,
                cyclic=list(sys.cyclic),
                controlled=name in CONTROLLED,
                multirate=name in MULTIRATE,
            )
        )
    return SystemsResponse(systems=infos)


@app.post("/experiments/validate", response_model=ValidateResponse)
def validate(config: Dict[str, Any] = Body(...)):
    errors = validation_errors(config)
    return ValidateResponse(valid=not errors, errors=errors)


@app.post("/experiments/run", response_model=RunSummaryRecord)
def run(config: ExperimentConfig, runner: ExperimentRunner = Depends(get_runner)):
    """
    Run one experiment synchronously and return its summary with artifact paths.
    The body is validated as an ExperimentConfig before anything runs.
    """
    try:
        return runner.run(config)
    except (ConfigError, UsageError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    except VmpcError as e:
        logger.error("experiment %s failed: %s", config.name, e)
        raise HTTPException(status_code=500, detail=f"{type(e).__name__}: {e}")
