#!/usr/bin/env python

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv(override=True)


def _env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


# Worker count for Monte-Carlo blocks, tuning columns and replications
N_JOBS = int(os.getenv("LAVA_N_JOBS", "1"))

LOG_LEVEL = os.getenv("LAVA_LOG_LEVEL", "INFO")

# Per-sweep descent assertion in the coordinate-descent solver
DEBUG = _env_flag("LAVA_DEBUG")

# Solver defaults
DEFAULT_TOL = float(os.getenv("LAVA_CD_TOL", "1e-8"))
DEFAULT_MAX_ITER = int(os.getenv("LAVA_CD_MAX_ITER", "100000"))

# Monte-Carlo draws are generated in blocks of this many replications
MC_BLOCK_SIZE = 10_000
