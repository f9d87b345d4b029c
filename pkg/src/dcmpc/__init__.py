"""Energy-minimizing control of data-center cooling and server allocation.

Receding-horizon policies over per-minute workload traces, built on a
log-space convex reformulation of the joint CRAC/server problem and a
self-contained log-barrier solver.
"""

from .controller import (
    ComparisonReport,
    ComparisonRow,
    ExperimentConfig,
    compare,
    run_mpc,
    run_oos,
    run_scenario_mpc,
)
from .errors import (
    ConfigError,
    DcmpcError,
    DomainError,
    InfeasibleError,
    PreconditionError,
    QueueInstabilityError,
    UsageError,
)
from .model import (
    ClusterParams,
    ControlInput,
    PlantParams,
    PowerModel,
    StepRecord,
    SystemState,
    TrajectoryLog,
    cop,
    response_time,
    server_power,
    simulate,
    step_temperature,
    total_energy,
)
from .posy import (
    F_cool,
    Monomial,
    Posynomial,
    cpu_temp_posynomial,
    fluctuation_penalty,
    posy_eval,
    posy_log_eval,
    q_poly,
)
from .program import (
    ConvexProgram,
    VariableLayout,
    WindowData,
    build_deterministic,
    build_penalized,
    build_scenario,
    decode,
)
from .scenario import (
    History,
    ScenarioSet,
    empirical_satisfaction,
    extract_scenarios,
    satisfaction_bound,
)
from .solver import Phase1Result, Solution, SolverConfig, minimize, phase1
from .trace import SyntheticSpec, TraceSchema, WorkloadTrace, load_csv, save_csv, split, synth

__version__ = "0.1.0"
