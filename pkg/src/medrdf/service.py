"""HTTP front end: one endpoint per experiment command plus single-image diagnosis.

Run with ``uvicorn medrdf.service:app``.
"""
from __future__ import annotations

import logging
from importlib.metadata import PackageNotFoundError, version

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .classifier import load_checkpoint
from .engine import min_top_probability, predict
from .errors import CapabilityError, ConfigError, InvalidInputError, MedRDFError, ParseError
from .harness.commands import COMMANDS, run_command
from .harness.config import parse_config
from .schemas import (CommandRequest, CommandResponse, DiagnoseRequest, DiagnoseResponse,
                      ErrorResponse, HealthResponse)
from .tensor import as_image

log = logging.getLogger(__name__)

try:
    VERSION = version("artifact")
except PackageNotFoundError:
    VERSION = "0.0.0"

app = FastAPI(title="MedRDF", version=VERSION)

# (category, HTTP status) per error class, most specific first
_CATEGORIES = [
    (ConfigError, "config", 422),
    (InvalidInputError, "validation", 422),
    (ParseError, "parse", 400),
    (CapabilityError, "capability", 409),
    (MedRDFError, "internal", 500),
]


def error_body(exc: Exception) -> tuple:
    for cls, category, status in _CATEGORIES:
        if isinstance(exc, cls):
            return status, ErrorResponse(category=category, message=str(exc),
                                         exit_code=cls.exit_code)
    return 500, ErrorResponse(category="internal", message=str(exc), exit_code=1)


@app.exception_handler(MedRDFError)
async def _medrdf_error(request: Request, exc: MedRDFError):
    status, body = error_body(exc)
    return JSONResponse(status_code=status, content=body.model_dump())


@app.exception_handler(OSError)
async def _io_error(request: Request, exc: OSError):
    # a missing or unreadable input file is a problem with the request
    body = ErrorResponse(category="validation",
                         message=f"{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "),
                         exit_code=InvalidInputError.exit_code)
    return JSONResponse(status_code=422, content=body.model_dump())


@app.exception_handler(RequestValidationError)
async def _request_error(request: Request, exc: RequestValidationError):
    first = exc.errors()[0] if exc.errors() else {"loc": (), "msg": "invalid request"}
    loc = ".".join(str(p) for p in first["loc"])
    body = ErrorResponse(category="validation", message=f"{loc}: {first['msg']}",
                         exit_code=InvalidInputError.exit_code)
    return JSONResponse(status_code=422, content=body.model_dump())


@app.get("/health", response_model=HealthResponse)
def health():
    return HealthResponse(version=VERSION)


def _run(command: str, req: CommandRequest) -> CommandResponse:
    cfg = parse_config(req.config).with_overrides(seed=req.seed, out=req.out)
    log.info("running %s into %s", command, cfg.out)
    result = run_command(command, cfg)
    return CommandResponse(command=command, out=cfg.out, **result)


def _register(command: str):
    def endpoint(req: CommandRequest) -> CommandResponse:
        return _run(command, req)

    endpoint.__name__ = command.replace("-", "_")
    app.post(f"/{command}", response_model=CommandResponse,
             responses={422: {"model": ErrorResponse}, 400: {"model": ErrorResponse}})(endpoint)


for _command in COMMANDS:
    _register(_command)


@app.post("/diagnose", response_model=DiagnoseResponse)
def diagnose(req: DiagnoseRequest):
    model = load_checkpoint(req.checkpoint)
    x = as_image(req.image, model.input_shape)
    if x.min() < 0 or x.max() > 1:
        raise InvalidInputError("image intensities must lie in [0, 1]")
    d = predict(model, x, req.medrdf.to_domain(req.seed))
    return DiagnoseResponse(**d.to_dict(), abstained=d.abstained,
                            min_top_probability=min_top_probability(len(d.counts), d.rm))
