import inspect
import math
import os

THIS_FILE = os.path.abspath(inspect.getsourcefile(lambda: None) or __file__)
THIS_DIR = os.path.dirname(THIS_FILE)

###############################################################################
# Constants
###############################################################################

CONFIGS_DIR = os.path.join(THIS_DIR, "configs")
DEFAULT_OUTPUT_DIR = os.path.join(THIS_DIR, "out")

# grids
MIN_GRID_N = 8
DEFAULT_GRID_N = 64
DEFAULT_LENGTH = 2.0 * math.pi
MAX_WIRTINGER_ORDER = 8

# relative tolerance on the zero mode before dbar_inverse refuses its input
GAUGE_TOL = 1e-12

# flows
FLOW_ORDERS = (1, 2)
SCHEMES = ("ifrk4", "rk4")
DEFAULT_SCHEME = "ifrk4"
DEFAULT_STEPS = 1000
DEFAULT_SNAPSHOT_EVERY = 100
DEFAULT_BLOWUP_CAP = 1e6
# dt = DT_SAFETY / (k_cut / 2) ** (2 * n_flow + 1)
DT_SAFETY = 0.5
REALITY_TOL = 1e-10

IC_KINDS = ("cosine", "random", "bump")
DEFAULT_IC_KIND = "random"
DEFAULT_AMPLITUDE = 0.1
DEFAULT_IC_KMAX = 4
DEFAULT_SEED = 0

DIAGNOSTICS_COLUMNS = ("step", "t", "S", "max_abs_p", "s_drift_rel", "flux_residual")
DIAGNOSTICS_FILENAME = "diagnostics.csv"
RESOLVED_CONFIG_FILENAME = "resolved_config.json"
SUMMARY_FILENAME = "summary.json"

# surfaces
CHART_KINDS = ("periodic", "open")
TOL_CONF = 1e-6
TOL_CLOSED = 1e-5
TOL_ROUND_TRIP = 1e-5
TOL_DIRAC = 1e-5
TOL_WILLMORE_REL = 1e-2
TOL_MINIMAL = 1e-6
DEGENERATE_LAMBDA = 1e-8
# a neighbouring spinor pair farther than this fraction of its own size means a branch point
BRANCH_JUMP = 0.5
PATH_INDEPENDENCE_FACTOR = 10.0
# closedness residuals below this count as exact when scaling the path-independence tolerance
RESIDUAL_FLOOR = 1e-12

BUILTIN_SURFACES = ("plane", "sphere", "enneper", "cylinder", "torus")

# process exit codes
EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2
