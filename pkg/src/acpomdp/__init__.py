"""Average-cost POMDP toolkit: filter contraction checks, quantized belief MDPs,
vanishing-discount solutions, finite-window Q-learning and prior robustness."""

from .avgcost import (AcoeSolution, average_cost_exact, robustness_bound, robustness_gap,
                      vanishing_discount)
from .beliefmdp import (BeliefMeasure, FiniteMdp, MonteCarlo, Quantizer, build_quantized_mdp, eta,
                        quantize, quantizer_for, value_iteration)
from .errors import NumericalError, PomdpError, ValidationError
from .filtering import dual_filter_run, filter_update, run_filter, simulate
from .metrics import AssumptionReport, LineMetric, assumption_report, bl_distance, transport_lp, w1
from .model import FinitePomdp, builtin, discretize, validate
from .qlearn import QTable, Quantized, Window, WindowState, psi, q_learning, window_mdp

__version__ = "0.1.0"
