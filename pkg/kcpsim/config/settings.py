import os
from pathlib import Path

from dotenv import load_dotenv

# Base directories
BASE_DIR = Path(__file__).resolve().parent.parent.parent
load_dotenv(BASE_DIR / ".env")

OUTPUT_DIR = BASE_DIR / "output"
LOG_DIR = Path(os.getenv("LOG_DIR", BASE_DIR / "logs"))

# Logging (the only settings read from the environment)
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_JSON = os.getenv("LOG_JSON", "0") == "1"
LOG_MAX_BYTES = 10 * 1024 * 1024
LOG_BACKUP_COUNT = 5

# Numeric policy
CLAMP_TOLERANCE = 1e-12
CHECK_INVARIANTS = True
CLOCK_BATCH = 16
EVENT_BUDGET = 10_000_000
DEFAULT_PATH_CAP = 10_000
PATH_EXPANSION_FACTOR = 50
LAMBDA_SEARCH_CAP = 1e9
SURVIVAL_LEVEL = 0.5
CONFIDENCE = 0.95

# Run defaults, overridden by config file then flags
DEFAULTS = {
    "dim": 1,
    "lam": 1.0,
    "mu": 0.5,
    "lambda_grid": None,
    "mu_grid": None,
    "domain": "torus",
    "size": 21,
    "horizon": 10.0,
    "replicas": 100,
    "seed": None,
    "delta": 0.0,
    "output": None,
    "kind": "bounded",
    "sample_times": None,
    "snapshot_time": None,
    "jobs": 1,
    "format": "pgm",
    "direction": "lambda",
    "bracket": None,
    "tolerance": 0.05,
    "level": SURVIVAL_LEVEL,
    "epsilon": 0.2,
    "p": 0.7,
    "depth": 20,
    "trials": 100,
    "cap": DEFAULT_PATH_CAP,
}
