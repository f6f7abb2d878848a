import os
import logging
from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("SIMCACHE_LOG_LEVEL", "INFO").upper()
DETERMINISTIC = os.getenv("SIMCACHE_DETERMINISTIC", "false").lower() in ("1", "true", "yes")
OUTPUT_DIR = os.getenv("SIMCACHE_OUTPUT_DIR", "./results")
DEFAULT_SEED = int(os.getenv("SIMCACHE_SEED", "42"))


def configure_logging(verbose: bool = False):
    """Configure the root logger for CLI runs."""
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
