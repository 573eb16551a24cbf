"""
=============================================================================
CAUSTICA API — Experiment gateway
=============================================================================

Runs the same experiments as `python -m caustica_backend.cli` over HTTP and
streams their progress.

Endpoints
---------
- GET  /                          : Health check; returns API name and docs URL.
- GET  /api/experiments           : Experiment names, descriptions and default parameters.
- POST /api/experiments/<name>    : Run one experiment (JSON body: parameter overrides).
  - Response: application/x-ndjson stream. Each line is a JSON object:
    - {"type": "step", "step": "<validating|running|writing|done>"}
    - {"type": "log", "message": "..."}
    - {"type": "check", "name": "...", "measured": ..., "expected": "...", "passed": true}
    - {"type": "result", "passed": true, "rows": [...], "files": [...], ...}
    - {"type": "error", "detail": "..."}
- GET  /api/artifacts/<filename>  : Download a file written by an earlier run.

Environment
----------
- CAUSTICA_OUTPUT_DIR : where artifacts are written (default caustica_out).
- CAUSTICA_THREADS    : worker cap for frequency sweeps.
- .env loaded from caustica_backend/.env (via caustica_backend.settings).
"""
import asyncio
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, StreamingResponse

from caustica_backend import settings
from caustica_backend.cli import EXPERIMENTS, resolve_params, write_artifacts
from caustica_backend.io_formats import versioned

settings.configure_logging()
logger = logging.getLogger(__name__)

app = FastAPI(title="Caustica API", version="0.1.0")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:5173", "http://127.0.0.1:5173"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

_DONE = object()


def _line(payload: Dict[str, Any]) -> str:
    return json.dumps(versioned(payload)) + "\n"


def emit(step: str) -> str:
    return _line({"type": "step", "step": step})


@app.get("/")
def root():
    return {"message": "Caustica API", "docs": "/docs"}


@app.get("/api/experiments")
def list_experiments():
    return {
        "experiments": [
            {"name": e.name, "help": e.help, "defaults": e.defaults, "out": e.out}
            for e in EXPERIMENTS.values()
        ]
    }


@app.get("/api/artifacts/{filename}")
def download_artifact(filename: str):
    """Serve a file from the output directory."""
    if "/" in filename or "\\" in filename or filename.startswith("."):
        raise HTTPException(status_code=400, detail="Invalid filename")
    path = settings.output_dir().resolve() / filename
    if not path.is_file():
        raise HTTPException(status_code=404, detail="File not found")
    return FileResponse(path, filename=filename)


async def _stream_experiment(name: str, params: Dict[str, Any], out: Optional[str]):
    """Async generator: run the experiment in a worker thread and forward its log lines."""
    loop = asyncio.get_running_loop()
    queue: asyncio.Queue = asyncio.Queue()

    def log(message: str):
        loop.call_soon_threadsafe(queue.put_nowait, message)

    def run():
        try:
            return EXPERIMENTS[name].run(params, log)
        finally:
            loop.call_soon_threadsafe(queue.put_nowait, _DONE)

    yield emit("running")
    task = asyncio.create_task(asyncio.to_thread(run))
    while True:
        message = await queue.get()
        if message is _DONE:
            break
        yield _line({"type": "log", "message": message})

    try:
        result = await task
    except (ValueError, RuntimeError) as e:
        logger.error(f"{name}: {e}")
        yield _line({"type": "error", "detail": str(e)})
        return

    for c in result.checks:
        yield _line({"type": "check", **asdict(c)})

    yield emit("writing")
    seed = params.get("seed", settings.default_seed())
    target = settings.output_dir() / (out or EXPERIMENTS[name].out)
    try:
        files = await asyncio.to_thread(write_artifacts, result, target, seed)
    except OSError as e:
        yield _line({"type": "error", "detail": f"could not write artifacts: {e}"})
        return

    yield _line({
        "type": "result",
        "experiment": name,
        "passed": result.passed,
        "params": result.params,
        "rows": result.rows,
        "extra": result.extra,
        "files": [Path(f).name for f in files],
    })
    yield emit("done")


@app.post("/api/experiments/{name}")
async def run_experiment(name: str, body: Optional[Dict[str, Any]] = Body(default=None)):
    if name not in EXPERIMENTS:
        raise HTTPException(status_code=404, detail=f"Unknown experiment: {name}")
    overrides = dict(body or {})
    out = overrides.pop("out", None)
    if out is not None and ("/" in str(out) or "\\" in str(out)):
        raise HTTPException(status_code=400, detail="out must be a bare file name")
    try:
        params = resolve_params(name, overrides)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))

    async def stream():
        yield emit("validating").encode("utf-8")
        async for chunk in _stream_experiment(name, params, out):
            yield chunk.encode("utf-8")

    return StreamingResponse(
        stream(),
        media_type="application/x-ndjson",
        headers={"Cache-Control": "no-store"},
    )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("app:app", host="127.0.0.1", port=8000)
