"""Load-redistribution attack analysis and NPDSB-based detection on DC grid models."""
from .attack import (
    ALPHA_CAP,
    AlphaMin,
    AttackSpec,
    DeviationVector,
    attack_bounds,
    attack_direction,
    attack_objective,
    find_alpha_min,
    greedy_best_attack,
    lp_best_attack,
    physical_flows,
    verify_optimality,
)
from .cases import case3, case6, load_builtin, resolve_case, separation_case
from .detector import (
    AlphaMinConfig,
    AssetProfile,
    DetectionReport,
    DetectionVerdict,
    LRAttackDetector,
    build_asset_profile,
    classify,
    detect,
    dump_profiles,
    load_profiles,
    npdsb,
)
from .dispatch import DispatchSolution, InfeasibleDispatchError, LpProblem, LpSolution, solve_dcopf, solve_lp
from .estimation import (
    MeasurementModel,
    StateEstimate,
    build_measurement_model,
    craft_bypass,
    default_tau,
    estimate_states,
    state_error_for_deviation,
)
from .grid import (
    Branch,
    Bus,
    CaseFormatError,
    Generator,
    GridCase,
    apply_modifications,
    flow_based_ratings,
    parse_case,
    parse_matpower,
    read_case,
    serialize_case,
    synthetic_case,
    validate,
)
from .network import (
    DisconnectedNetworkError,
    ImbalanceError,
    PtdfMatrix,
    build_susceptance,
    compute_ptdf,
    flows_from_ptdf,
    solve_dcpf,
)
from .scenario import NoiseConfig, ScenarioRecord, make_noise, monte_carlo, random_lr_attack, run_pipeline

__version__ = "0.1.0"
