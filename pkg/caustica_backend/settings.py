"""
=============================================================================
SETTINGS — Environment configuration for the CLI and the experiments API
=============================================================================

Loads caustica_backend/.env (if present) and exposes the few knobs that are
not per-run flags.

Environment
----------
- CAUSTICA_THREADS    : Cap on worker threads for sweeps (default: CPU count).
- CAUSTICA_OUTPUT_DIR : Where relative artifact paths land (default: ./caustica_out).
- CAUSTICA_LOG_LEVEL  : logging level name (default: INFO).
- CAUSTICA_SEED       : Default seed for randomized sampling (default: 0).
"""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv(dotenv_path=os.path.join(os.path.dirname(__file__), ".env"), override=True)

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "caustica_out"


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw in (None, ""):
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"ignoring non-integer {name}={raw!r}")
        return default


def thread_cap() -> int:
    return max(1, _int_env("CAUSTICA_THREADS", os.cpu_count() or 1))


def default_seed() -> int:
    return _int_env("CAUSTICA_SEED", 0)


def output_dir() -> Path:
    return Path(os.getenv("CAUSTICA_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR)


def log_level() -> int:
    name = (os.getenv("CAUSTICA_LOG_LEVEL") or "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def configure_logging():
    logging.basicConfig(level=log_level(), format="%(levelname)s %(name)s: %(message)s")
