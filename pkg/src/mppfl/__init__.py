"""Reward and privacy-budget game between a federated server and socially linked clients."""

from .config import ScenarioConfig, load_config, parse_config, validate
from .equilibrium import (
    EquilibriumReport,
    NonContractiveWarning,
    PoAReport,
    best_response,
    feasible_bounds,
    fixed_point,
    poa_analysis,
    poa_closed_form_mpp,
    poa_true,
    sa_equilibrium,
    sa_lower_bound,
    solve_unit_reward,
    sw_optimum,
)
from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    InfeasibleBudgetError,
    MPPFLError,
    NonConvergenceError,
    ParameterError,
    SolverError,
    StructuralError,
)
from .experiments import SweepResult, compare_strategies, run_scenario, sweep
from .flsim import SyntheticTask, TrainingTrace, clip_update, make_task, perturb_gradient, run_federated
from .graph import (
    PropagationModel,
    RowStochasticMatrix,
    WeightedDigraph,
    external_risk,
    generate_er_graph,
    make_rng,
    propagation_coefficients,
    read_graph,
    row_normalize,
    write_graph,
)
from .mechanism import (
    ClientProfile,
    GameState,
    ServerModelParams,
    accuracy_loss_bound,
    client_utility,
    client_utility_mf,
    composite_risk,
    computation_cost,
    epsilon_i,
    noise_variance,
    roster,
    server_cost,
    social_welfare,
)

__version__ = "0.1.0"
