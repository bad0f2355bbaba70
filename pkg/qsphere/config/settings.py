"""
Configuration settings for qsphere
"""

import os
from pathlib import Path

from dotenv import load_dotenv


load_dotenv()

# Base directories
BASE_DIR = Path(__file__).parent.parent.parent
DEFAULT_OUT_DIR = Path(os.getenv("QSPHERE_OUT", str(BASE_DIR / "runs")))

# Grid limits
MIN_NLAT = 8  # Below this the audit suite cannot resolve Y_2 products

# Evolver defaults
DEFAULT_DS = 0.01  # Log-time step
DEFAULT_SAFETY = 0.8  # Fraction of the RK4 stability limit
DEFAULT_SNAPSHOT_EVERY = 10  # Steps of DEFAULT_DS between snapshots
RK4_STABILITY_RADIUS = 2.78  # Negative real axis extent of the RK4 region
MIN_DS = 1e-7  # Smaller admissible steps are reported as CFL collapse

# Ricci flow defaults
RICCI_FLOW_SAFETY = 0.5
RICCI_NLAT = 32  # Preset resolution; nlat 16 leaves Gauss-Bonnet errors near 1e-6
RICCI_DS = 0.005
RICCI_DECAY_NOISE_FLOOR = 1e-11  # Fits ignore samples below this
RICCI_DECAY_REL_FLOOR = 1e-7  # Rate fits stop once a norm falls this far below its start
POLE_REGULARITY_TOL = 1e-5  # Extrapolated |a - b| at the poles, relative

# Envelope sweep
ENVELOPE_DENSITY = 8  # Sweep nodes per snapshot interval
HORIZON_START_FACTOR = 1e-3  # Scaled envelopes start at eps_min * factor

# Audit tolerances
ENVELOPE_TOL = 1e-6
ORACLE_TOL = 1e-4
MASS_BOUND_TOL = 1e-6
DRIFT_TOL = 1e-6
TAIL_FIT_MIN_R2 = 0.9  # Below this an L1 tail fit is indeterminate
ADM_FIT_MIN_R2 = 0.99
ADM_CONSTANT_TAIL_TOL = 1e-5  # Tail spread below this reports a settled mass, not a 1/t fit
DECAY_SLOPE_MAX = -0.9  # Fitted log-log slope that counts as O(1/t)
CURVATURE_SLOPE_MAX = -2.9  # Same, for O(1/t^3)
FLAT_NORM_FLOOR = 1e-10  # Norms below this are treated as identically zero
ADM_MIN_T_END = 20.0

# Horizon defaults
DEFAULT_EPS_LADDER = [0.04, 0.02, 0.01]
DEFAULT_ETA = 0.1
RICCI_HORIZON_ETA = 0.8  # Above the 0.6 curvature deviation of the 1.2 spheroid

# CSV rendering
CSV_FLOAT_FORMAT = "%.17g"

# Worker pool
DEFAULT_THREADS = int(os.getenv("QSPHERE_THREADS", "1"))

# Logging
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')  # DEBUG, INFO, WARNING, ERROR

def should_log(level: str) -> bool:
    """Check if message should be logged based on current level"""
    levels = {'DEBUG': 0, 'INFO': 1, 'WARNING': 2, 'ERROR': 3}
    return levels.get(level, 0) >= levels.get(LOG_LEVEL, 1)

# Development mode
DEBUG = os.getenv("DEBUG", "False").lower() == "true"
