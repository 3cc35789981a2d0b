"""DREM parameter identification with a disturbance-averaging estimation law."""

from .diagnostics import (
    ExcitationReport,
    InequalityResult,
    c2_integral,
    check_inequality,
    detect_activation,
    excitation_report,
    fe_level,
    pe_level,
)
from .estimators import EstimatorState, averaging_rhs, gradient_rhs, kappa_rhs
from .expcli import (
    ConfigError,
    RunConfig,
    bundled_scenario_path,
    load_config,
    load_scenario_file,
    read_trace,
    run_experiment,
    write_csv,
)
from .extension import ExtensionState, extension_rhs, fe_extension_rhs, kreisselmeier_rhs
from .integrator import SimResult, StateLayout, StepError, Trace, integrate, rk4_step
from .mixing import MixedSignals, delta_dot, mix
from .observer import (
    ConstantMap,
    InputLinearMap,
    ObserverState,
    PlantScenario,
    PlantSpec,
    build_regression,
    epsilon_x_bound,
    filters_rhs,
    plant_rhs,
    reconstruct_state,
)
from .signals import (
    AveragingLaw,
    Constant,
    ExpDecay,
    FeDecay,
    GradientLaw,
    Kreisselmeier,
    ScenarioSpec,
    Scale,
    SignalExpr,
    Sin,
    Sum,
    eval_disturbance,
    eval_output,
    eval_regressor,
)
from .smallmat import DimensionError, LyapunovError, adjugate, det, solve_lyapunov, trace_prod

__version__ = "0.1.0"
