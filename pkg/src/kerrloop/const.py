import math
from src.kerrloop.config import code_version

# Plant cavity (bistable element)
PLANT_KAPPA = 150.0
PLANT_KAPPA_PARTS = (50.0, 50.0, 50.0)  # (loop in b1, loop out b2, bias b3)
PLANT_DELTA = 5 * PLANT_KAPPA
PLANT_CHI = -PLANT_DELTA / (10 * math.sqrt(2))
# bias enters as sqrt(kappa_b3) * beta, with sqrt(kappa_b3) * beta = 10.4934 * kappa_b3
PLANT_BETA = 10.4934 * math.sqrt(PLANT_KAPPA_PARTS[2])

# Controller cavity
CONTROLLER_KAPPA = 50.0
CONTROLLER_DELTA = 3 * CONTROLLER_KAPPA
CONTROLLER_CHI = -CONTROLLER_DELTA / 8

DEFAULT_DIMS = (25, 25)
DESK_DIMS = (15, 15)

# Loop phases where plant bistability survives
PHI_SUPPRESS = 2.3681
PHI_ENHANCE = 5.2277

# Mode order is fixed: controller a first (slow Kronecker factor), plant b second
CONTROLLER_MODE = 0
PLANT_MODE = 1

# Registered observable names
OBS_A = "a"
OBS_B = "b"
OBS_N_A = "n_a"
OBS_N_B = "n_b"

# Tolerances
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8
PARTS_SUM_TOL = 1e-9
COEFF_CHOP = 1e-12
DENSE_LIOUVILLIAN_LIMIT = 64
SPARSE_LIOUVILLIAN_LIMIT = 1024
NORM_INCREASE_TOL = 1e-9
PURITY_TOL = 1e-6
PHASE_MAGNITUDE_FLOOR = 1e-12
REGRESSION_FLOOR = 1e-10
FIT_FLOOR = 1e-6
SLH_TOL = 1e-9

# Bistability metric
PEAK_CONTRAST = 2.0
MIN_PEAK_OCCUPATION = 0.05

# Output formats
CSV_FLOAT_FORMAT = "%.17g"
RNG_ID = "numpy.random.Philox(4x64)"
OUTPUT_DIR_ENV = "KERRLOOP_OUTPUT_DIR"
MANIFEST_NAME = "manifest.json"
PHI_SWEEP_COLUMNS = ["phi", "bistable", "peak_low_n", "peak_high_n", "occ_low", "occ_high"]

# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

LOOPS = ("open", "static", "closed")
STEADY_METHODS = ("null-space", "long-time")
PROFILES = ("desk", "full")

HELP_MSG = f"""
kerrloop {code_version()}: Kerr-cavity bistability under coherent feedback

Subcommands:
  openloop-trajectory    quantum-jump trajectory of the bare plant
  closedloop-trajectory  quantum-jump trajectory with the controller in the loop
  steady-state           steady state of the open, static or closed loop
  phase-curve            controller reflected phase versus drive amplitude
  phi-sweep              closed-loop bistability versus loop phase
  regression             regression-to-steady-state timescales
  slh-check              series-product check of the closed-loop model
  spectrum               Liouvillian gap and switching timescale
"""
