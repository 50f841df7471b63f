import os

from dotenv import load_dotenv

load_dotenv()

# ── truncation / quadrature ──────────────────────────────────────────
TAIL_TOL = 1e-10
DEFAULT_SUBSTEPS = 4

# ── spectral ─────────────────────────────────────────────────────────
PERRON_TOL = 1e-13
PERRON_MAX_ITER = int(os.getenv("AGEPOP_PERRON_MAX_ITER", "20000"))
SIMPLICITY_GAP = 1e-8  # relative to r
LAMBDA0_TOL = 1e-10
BRACKET_EXPANSIONS = 60
EPS_BAND = 1e-6

# ── resolvent / asymptotics ──────────────────────────────────────────
CONDITION_LIMIT = 1e12
DENOMINATOR_FLOOR = 1e-14
NOISE_FLOOR = 1e-12
CONVERGED_TOL = 1e-8
RESIDUE_DELTAS = (1e-2, 1e-3, 1e-4)

# ── oracle ───────────────────────────────────────────────────────────
ORACLE_DENSE_CAP = 2000

# ── runtime ──────────────────────────────────────────────────────────
MAX_WORKERS = int(os.getenv("AGEPOP_MAX_WORKERS", "4"))
