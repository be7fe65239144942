"""Safety filters for dynamically defined control laws.

Core pieces: a disturbance observer with a certified error envelope, barrier
constraints over the joint state-input space (plain and high-order chain
forms), an exact least-norm correction solver, a fixed-step closed-loop
simulator, and two vehicle benchmarks plus a CLI.
"""

from .barriers import (BarrierChain, BarrierSpec, DomainBox, ValidityReport,
                       chain_value, chain_values, check_validity,
                       input_gradient, safety_deficit)
from .control_laws import (ACCPredictiveLaw, LinePath, PILaw, StanleyLaw,
                           WaypointPath, acc_predicted_output, acc_rate,
                           pi_rate, stanley_rate, stanley_steer, wrap_angle)
from .errors import (BlowupError, ConfigurationError, ContractViolationError,
                     NumericalDomainError)
from .filter import (FilterConstraint, FilterResult, safe_rate, solve_multi,
                     solve_single)
from .model import (AugmentedState, ClassKFunction, DisturbanceBounds,
                    SystemModel, eval_dynamics, finite_diff_gradient)
from .observer import (ObserverConfig, ObserverState, check_gain_condition,
                       default_initial_error_bound, disturbance_estimate,
                       error_envelope, observer_rhs, projection_gain,
                       robustness_margin)
from .rng import SplitMix64
from .scenarios import (build_acc, build_bicycle, build_example1,
                        build_scenario, sinusoid_disturbance)
from .simulate import (Scenario, SimConfig, TrajectoryLog, rk4_step,
                       run_closed_loop, summarize)

__version__ = "0.1.0"
