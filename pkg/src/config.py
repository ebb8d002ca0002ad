from pathlib import Path
import os

PROJECT_ROOT = Path(__file__).resolve().parents[1]

OUTPUT_DIR = Path(os.getenv("VMPC_OUTPUT_DIR", str(PROJECT_ROOT / "runs")))

# Implicit step solves
NEWTON_TOL = float(os.getenv("NEWTON_TOL", "1e-10"))
NEWTON_MAX_ITER = int(os.getenv("NEWTON_MAX_ITER", "50"))

# Conic solves
PRIMARY_SOLVER = os.getenv("PRIMARY_SOLVER", "CLARABEL")
SECONDARY_SOLVER = os.getenv("SECONDARY_SOLVER", "SCS")
SOCP_TOL = float(os.getenv("SOCP_TOL", "1e-8"))
SOCP_MAX_ITER = int(os.getenv("SOCP_MAX_ITER", "200"))
SDP_TOL = float(os.getenv("SDP_TOL", "1e-10"))
LMI_SLACK_TOL = float(os.getenv("LMI_SLACK_TOL", "1e-7"))

# Linearization
CONDITION_LIMIT = float(os.getenv("CONDITION_LIMIT", "1e10"))
GRID_POINTS = int(os.getenv("GRID_POINTS", "9"))
BOUND_INFLATION = float(os.getenv("BOUND_INFLATION", "0.10"))

# Receding horizon
RHOCP_MAXITER = int(os.getenv("RHOCP_MAXITER", "1"))
WARMUP_MAX_ITER = int(os.getenv("WARMUP_MAX_ITER", "20"))
TERMINAL_SLACK_PENALTY = float(os.getenv("TERMINAL_SLACK_PENALTY", "1e4"))

# Harness
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "0"))
TIMING_REPEATS = int(os.getenv("TIMING_REPEATS", "5"))

GRAVITY = float(os.getenv("GRAVITY", "9.81"))
