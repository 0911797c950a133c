"""HTTP service wrapping the simulator.

Runs execute synchronously inside the request (FastAPI dispatches plain ``def``
handlers to a thread pool, so independent clients do not block each other).
Results stay in an in-memory store keyed by a content hash of the request, so
re-submitting an identical deterministic request is served from the store.
"""

from __future__ import annotations

import hashlib
import json
import threading

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import ExperimentConfig
from .errors import ConfigError
from .runner import Report, build_partition, comparison_config, run_config, sweep_config

app = FastAPI(title="fedbac", version=__version__)


class RunRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    seeds: list[int] | None = None
    deterministic: bool = True


class SweepRequest(RunRequest):
    axis: str
    values: list[float]


class PartitionRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    seed: int = Field(0, ge=0)


class RunResponse(BaseModel):
    run_id: str
    summary: dict
    files: list[str]


class _Store:
    def __init__(self):
        self._lock = threading.Lock()
        self._reports: dict[str, Report] = {}

    def put(self, run_id: str, report: Report) -> None:
        with self._lock:
            self._reports[run_id] = report

    def get(self, run_id: str) -> Report:
        with self._lock:
            report = self._reports.get(run_id)
        if report is None:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
        return report


store = _Store()


def _run_id(kind: str, payload: BaseModel) -> str:
    blob = json.dumps({"kind": kind, **payload.model_dump(mode="json")}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _respond(run_id: str, report: Report) -> RunResponse:
    store.put(run_id, report)
    return RunResponse(
        run_id=run_id, summary=report.summary, files=[*report.csvs, *report.extra]
    )


def _config_error(exc: ConfigError) -> HTTPException:
    return HTTPException(status_code=422, detail=str(exc))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/runs", response_model=RunResponse)
def create_run(req: RunRequest) -> RunResponse:
    try:
        report = run_config(req.config, req.seeds, req.deterministic)
    except ConfigError as exc:
        raise _config_error(exc) from exc
    return _respond(_run_id("run", req), report)


@app.post("/compare", response_model=RunResponse)
def create_comparison(req: RunRequest) -> RunResponse:
    try:
        report = run_config(comparison_config(req.config), req.seeds, req.deterministic)
    except ConfigError as exc:
        raise _config_error(exc) from exc
    return _respond(_run_id("compare", req), report)


@app.post("/sweeps", response_model=RunResponse)
def create_sweep(req: SweepRequest) -> RunResponse:
    try:
        report = sweep_config(req.config, req.axis, req.values, req.seeds, req.deterministic)
    except ConfigError as exc:
        raise _config_error(exc) from exc
    return _respond(_run_id("sweep", req), report)


@app.get("/runs/{run_id}")
def get_run(run_id: str) -> dict:
    return store.get(run_id).summary


@app.get("/runs/{run_id}/files/{name:path}")
def get_file(run_id: str, name: str):
    report = store.get(run_id)
    if name in report.csvs:
        return PlainTextResponse(report.csvs[name], media_type="text/csv")
    if name in report.extra:
        return JSONResponse(report.extra[name])
    raise HTTPException(status_code=404, detail=f"no file {name!r} in run {run_id}")


@app.post("/partitions")
def partition_manifest(req: PartitionRequest) -> dict:
    """Per-client class histograms for the partition a run with this seed would use."""
    try:
        return build_partition(req.config, req.seed).manifest()
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
