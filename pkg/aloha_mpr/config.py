import os
import json
import logging

import mmh3

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.path.join(os.path.dirname(BASE_DIR), "data")

LOG_PATH = os.path.join(DATA_DIR, "aloha_mpr.log")

# --- Channel ---
MC_SAMPLES = 1_000_000
MC_CHUNK = 100_000

# --- Stability / Closure ---
CLOSURE_GRID = 21
CLOSURE_RAYS = 90
CONVEXITY_TOL = 1e-12
MARGINAL_TOL = 1e-9

# --- Kernel ---
ROOT_TOL = 1e-12
CONTOUR_SAMPLES = 512

# --- Conformal Map ---
THEODORSEN_GRID = 512
THEODORSEN_TOL = 1e-10
THEODORSEN_MAX_ITER = 200
THEODORSEN_DAMPING = 0.5
NEWTON_MAX_ITER = 60

# --- Boundary Value Problems ---
BVP_INDEX_TOL = 1e-10
DIRICHLET_TOL = 1e-2
KERNEL_ZERO_TOL = 1e-8

# --- Simulator ---
SIM_SLOTS = 10_000_000
SIM_WARMUP = 100_000
SIM_CHUNK = 1 << 20
SIM_WINDOWS = 20
DRIFT_SIGMA = 3.0
DRIFT_LEVEL_CAP = 1e4
HIST_BIN = 1

# --- Validation ---
VALIDATE_SLOTS = 2_000_000
VALIDATE_REPLICAS = 4
VALIDATE_REL_TOL = 0.02
VALIDATE_BVP_TOL = 1e-3
VALIDATE_DRIFT_PAIRS = 6       # boundary-straddling pairs per subregion
VALIDATE_DRIFT_OFFSET = 0.02   # distance from the boundary along each ray
VALIDATE_GRID3 = 128

# --- Workers ---
WORKER_THREADS = 4


def ensure_data_dir():
    if not os.path.exists(DATA_DIR):
        os.makedirs(DATA_DIR)


def setup_logging(level=logging.INFO, console=False, log_path=None):
    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    formatter = logging.Formatter(
        "%(asctime)s [%(levelname)s] [%(threadName)s] %(message)s", datefmt="%H:%M:%S"
    )
    if log_path is None:
        ensure_data_dir()
        log_path = LOG_PATH
    file_handler = logging.FileHandler(log_path, encoding="utf-8", mode="w")
    file_handler.setLevel(level)
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)

    if console:
        stream_handler = logging.StreamHandler()
        stream_handler.setLevel(logging.WARNING)
        stream_handler.setFormatter(formatter)
        root_logger.addHandler(stream_handler)

    logging.getLogger("numba").setLevel(logging.WARNING)
    return root_logger


def config_hash(cfg):
    """128-bit murmur hash of the canonical JSON dump, hex encoded."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return format(mmh3.hash128(blob, 0, signed=False), "032x")
