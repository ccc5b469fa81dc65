"""Shared numerical defaults for the multibody engine."""

MODEL_FORMAT_VERSION = 1

DEFAULT_ALPHA = 0.5
NEWTON_TOL = 1e-10
MAX_NEWTON_ITERS = 50
SINGULAR_PIVOT_RATIO = 1e-14

VALIDATION_TOL = 1e-9
MIN_BEAM_LENGTH = 1e-9
FRAME_TOL = 1e-9

FD_RELATIVE_STEP = 1e-6

OPT_INITIAL_STEP = 1e-2
OPT_BACKTRACK_FACTOR = 0.5
OPT_MAX_BACKTRACKS = 30
OPT_IMPROVEMENT_TOL = 1e-6
OPT_PATIENCE = 5
OPT_MAX_ITERS = 60
OPT_INITIAL_PENALTY = 10.0
OPT_PENALTY_GROWTH = 5.0
OPT_MAX_PENALTY = 1e6
STRESS_NORM_EXPONENT = 40.0

CSV_FLOAT_FORMAT = "%.17g"
