import os
import sys
from pathlib import Path

import dotenv
from loguru import logger

dotenv.load_dotenv()

LOG_LEVEL = os.getenv("CATE_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("CATE_LOG_FILE")

logger.remove()  # Remove default handler

# Console handler; diagnostics go to stderr so artifacts on stdout stay clean
logger.add(
    sink=lambda msg: print(msg, end="", file=sys.stderr),
    level=LOG_LEVEL,
    format="{time:HH:mm:ss} | {level} | {message}",
)

if LOG_FILE:
    Path(LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
    logger.add(
        LOG_FILE,
        level=LOG_LEVEL,
        format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {process} | {message}",
        enqueue=True,
    )

PENALTY_C = float(os.getenv("CATE_PENALTY_C", "1.1"))
TRIM_EPS = float(os.getenv("CATE_TRIM_EPS", "0.01"))
LASSO_MAX_ITER = int(os.getenv("CATE_LASSO_MAX_ITER", "10000"))
LASSO_TOL = float(os.getenv("CATE_LASSO_TOL", "1e-7"))
KKT_TOL = float(os.getenv("CATE_KKT_TOL", "1e-6"))
THREADS = int(os.getenv("CATE_THREADS", "0"))
CHECKPOINT_DIR = Path(os.getenv("CATE_CHECKPOINT_DIR", "checkpoints"))


def resolve_workers(threads: int | None = None) -> int:
    """Turn a thread setting (0 = auto) into a worker count."""
    threads = THREADS if threads is None else threads
    if threads <= 0:
        return os.cpu_count() or 1
    return threads
