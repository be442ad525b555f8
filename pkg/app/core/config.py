import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
DEFAULT_REGISTRY_PATH = DATA_DIR / "default.kernels"
EXTENDED_REGISTRY_PATH = DATA_DIR / "extended.kernels"

REGISTRY_PATH = os.getenv("GMC_REGISTRY_PATH", str(DEFAULT_REGISTRY_PATH))
METRIC = os.getenv("GMC_METRIC", "flops")
TOLERANCE = float(os.getenv("GMC_TOLERANCE", "1e-8"))
BRUTE_FORCE_LIMIT = int(os.getenv("GMC_BRUTE_FORCE_LIMIT", "12"))
MAX_CHECK_SIZE = int(os.getenv("GMC_MAX_CHECK_SIZE", "200"))
LOG_LEVEL = os.getenv("GMC_LOG_LEVEL", "WARNING")
HOIST_INFERENCE = os.getenv("GMC_HOIST_INFERENCE", "0") == "1"

HOST = os.getenv("GMC_HOST", "0.0.0.0")
PORT = int(os.getenv("GMC_PORT", "8000"))
