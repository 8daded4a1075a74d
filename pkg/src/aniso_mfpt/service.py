"""HTTP service exposing the scenario commands.

Each command endpoint takes a scenario document plus run options and returns
the produced files inline (text as UTF-8, binaries as base64).
"""

from __future__ import annotations

import base64
import logging
from typing import Literal, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .commands import (
    COMMANDS,
    EXIT_FAILURE,
    EXIT_INVALID,
    EXIT_REFUSED,
    CommandError,
    GuardRefusal,
    RunOptions,
    apply_options,
)
from .fd import SolverError
from .scenario import ScenarioError, scenario_hash, validate_scenario

log = logging.getLogger(__name__)


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: dict
    attachments: dict[str, str] = Field(default_factory=dict, description="referenced files, base64-encoded")
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    baseline_isotropic: bool = False
    raise_event_cap: Optional[int] = Field(default=None, ge=1)
    workers: Optional[int] = Field(default=None, ge=1)


class OutputFile(BaseModel):
    name: str
    encoding: Literal["utf-8", "base64"]
    content: str

    def data(self) -> bytes:
        return self.content.encode() if self.encoding == "utf-8" else base64.b64decode(self.content)


class RunResponse(BaseModel):
    command: str
    version: str
    exit_code: int
    scenario_hash: str
    D: float
    messages: list[str]
    files: list[OutputFile]


class ErrorResponse(BaseModel):
    command: str
    exit_code: int
    detail: str
    violations: list[str] = Field(default_factory=list)


class VersionResponse(BaseModel):
    name: str = "aniso-mfpt"
    version: str = __version__


def _encode(name: str, data: bytes) -> OutputFile:
    if name.endswith((".csv", ".txt")):
        return OutputFile(name=name, encoding="utf-8", content=data.decode())
    return OutputFile(name=name, encoding="base64", content=base64.b64encode(data).decode())


def _error(status: int, command: str, code: int, detail: str, violations=()) -> JSONResponse:
    body = ErrorResponse(command=command, exit_code=code, detail=detail, violations=list(violations))
    return JSONResponse(status_code=status, content=body.model_dump())


def run_command(command: str, req: RunRequest):
    """Validate the request's scenario and run ``command``; returns a response model or error response."""
    try:
        files = {name: base64.b64decode(blob, validate=True) for name, blob in req.attachments.items()}
    except ValueError:
        return _error(422, command, EXIT_INVALID, "attachments must be base64-encoded")
    try:
        scenario = validate_scenario(req.scenario, attachments=files)
    except ScenarioError as exc:
        return _error(422, command, EXIT_INVALID, "invalid scenario", exc.violations)
    opts = RunOptions(req.seed, req.baseline_isotropic, req.raise_event_cap, req.workers)
    try:
        result = COMMANDS[command](scenario, files, opts)
    except GuardRefusal as exc:
        return _error(409, command, EXIT_REFUSED, str(exc))
    except (CommandError, ValueError) as exc:
        return _error(400, command, EXIT_INVALID, str(exc))
    except SolverError as exc:
        return _error(500, command, EXIT_FAILURE, str(exc))
    except Exception as exc:  # noqa: BLE001 - reported to the client instead of a bare 500
        log.exception("%s failed", command)
        return _error(500, command, EXIT_FAILURE, f"{type(exc).__name__}: {exc}")
    effective = apply_options(scenario, opts)
    return RunResponse(
        command=command,
        version=__version__,
        exit_code=result.exit_code,
        scenario_hash=scenario_hash(effective, files),
        D=effective.D,
        messages=result.messages,
        files=[_encode(n, d) for n, d in result.files.items()],
    )


def create_app() -> FastAPI:
    app = FastAPI(title="aniso-mfpt", version=__version__,
                  description="Mean first passage times for anisotropic velocity-jump transport")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/version", response_model=VersionResponse)
    def version() -> VersionResponse:
        return VersionResponse()

    def register(command: str) -> None:
        doc = (COMMANDS[command].__doc__ or "").strip().splitlines()[0]

        def endpoint(req: RunRequest):
            return run_command(command, req)

        endpoint.__name__ = f"run_{command}"
        app.post(f"/{command}", response_model=RunResponse, summary=doc,
                 responses={400: {"model": ErrorResponse}, 409: {"model": ErrorResponse},
                            422: {"model": ErrorResponse}, 500: {"model": ErrorResponse}})(endpoint)

    for name in COMMANDS:
        register(name)
    return app


app = create_app()
