"""Shared-control game laboratory.

A population of simple learners shares the two inputs of one controlled
plant through a slot lottery.  The package provides the plant and expert
controllers (kinematic bicycle + receding-horizon tracking with obstacle
avoidance), the decentralized actor-critic that learns the role split,
and the analytic jump-linear stability machinery that predicts which
populations admit collective intelligence.
"""

from .config import ConfigError, PRESETS, RunConfig, load_config, save_config
from .control import (
    ControlError,
    DelayBuffer,
    FeedbackGains,
    MpcController,
    MpcProblem,
    ObstacleSpec,
    RoadSpec,
    build_envelope,
    default_feedback_gains,
    delayed_effective_gamma,
    derived_gammas,
    design_gain,
    feedback_policy,
    mpc_solve,
)
from .dynamics import (
    ControlInput,
    LAMBDA_DEFAULT,
    PlantParams,
    ScalarErrorSystem,
    VehicleState,
    build_error_subsystems,
    discretize_mode,
    fit_lambda,
    linearize_discretize,
    step_kinematic,
)
from .graph import (
    CommGraph,
    WeightMatrix,
    consensus_weights,
    graph_for_period,
    random_connected_graph,
)
from .marl import (
    AgentState,
    Transition,
    learning_round,
    load_checkpoint,
    make_population,
    sample_roles,
    write_checkpoint,
)
from .mjls import (
    MODE_ORDER,
    MjlsModel,
    REFERENCE_GAMMAS,
    RoleCensus,
    census_after_dol,
    ci_region_sweep,
    is_mss,
    mss_operator,
    scalar_mss_closed_form,
    spectral_radius,
    transition_row,
)
from .qp import QpResult, solve_qp
from .scg import (
    EpisodeRecord,
    ScenarioSpec,
    SimplifiedTrack,
    TrainResult,
    baseline_run,
    run_episode,
    train,
)

__version__ = "0.1.0"
