import os
from dotenv import load_dotenv

# FIXPOINT_* overrides may come from a .env file
load_dotenv()

class Config:
    # Tolerances
    TAU_DOM = float(os.getenv("FIXPOINT_TAU_DOM", 1e-9))
    TAU_FIX = float(os.getenv("FIXPOINT_TAU_FIX", 1e-9))
    TAU_CYCLE = float(os.getenv("FIXPOINT_TAU_CYCLE", 1e-10))
    TAU_MARGIN = float(os.getenv("FIXPOINT_TAU_MARGIN", 1e-10))
    TAU_VIP = float(os.getenv("FIXPOINT_TAU_VIP", 1e-7))
    # relative slack below which a violated pair counts as float rounding
    TAU_ROUNDING = float(os.getenv("FIXPOINT_TAU_ROUNDING", 1e-14))

    # Iteration and sampling limits
    CYCLE_WINDOW = int(os.getenv("FIXPOINT_CYCLE_WINDOW", 64))
    MAX_GRID_POINTS = int(os.getenv("FIXPOINT_MAX_GRID_POINTS", 4096))
    PAIR_CHUNK = int(os.getenv("FIXPOINT_PAIR_CHUNK", 256))
    CLAMP_THETA = float(os.getenv("FIXPOINT_CLAMP_THETA", 1e-12))
    # relative residual drop over one period that marks a contracting tail, not a cycle
    CYCLE_RESIDUAL_DROP = float(os.getenv("FIXPOINT_CYCLE_RESIDUAL_DROP", 1e-6))

    # Runs
    OUTPUT_DIR = os.getenv("FIXPOINT_OUTPUT_DIR", "./data/runs")
    LOG_LEVEL = os.getenv("FIXPOINT_LOG_LEVEL", "INFO")
    SEED = int(os.getenv("FIXPOINT_SEED", 0))
    SCHEMA_VERSION = 1
    TOOL_VERSION = "1.0.0"
