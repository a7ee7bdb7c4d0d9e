"""Parallel Glauber dynamics for CSMA scheduling on interference graphs.

Exact small-instance chain analysis (stationary law, mixing envelopes,
contraction checks), fugacity solvers for target service rates, and
fixed/adaptive queueing simulators with replayable RNG streams.
"""

from .errors import (
    ConfigError,
    ContractViolationError,
    DimensionError,
    EnumerationLimitError,
    GraphParseError,
    HorizonError,
    InapplicableError,
    ParameterError,
    PgdCsmaError,
)
from .graph import (
    InterferenceGraph,
    Schedule,
    ScheduleSpace,
    enumerate_feasible,
    interference_degree,
    is_feasible,
    load_graph,
    load_graph_file,
    mask_is_feasible,
    max_interference_degree,
)
from .dynamics import (
    ChainState,
    ExplicitRule,
    FugacityVector,
    IntentRule,
    check_irreducible,
    decision_distribution,
    detailed_balance_residual,
    link_inclusion_probabilities,
    matrix_stationary,
    pgd_step,
    product_form_stationary,
    sample_decision_schedule,
    transition_matrix,
)
from .mixing import (
    CoalescenceResult,
    ContractionCheck,
    MixingBoundReport,
    WeightFunction,
    adjacent_pairs,
    best_bound_tmix,
    coalescence_estimate,
    complete_graph_bound,
    contraction_bound,
    contraction_check,
    contraction_margin,
    empirical_mixing_time,
    evolve_distribution,
    standard_weight_bounds,
    tv_distance,
)
from .fugacity import (
    CapacityResult,
    FugacityBoundsReport,
    FugacitySolution,
    RateVector,
    capacity_check,
    fixed_point_fugacities,
    fugacity_bounds_report,
    gibbs_gradient,
    gibbs_objective,
    service_rate_identity_residual,
    service_rates,
    solve_fugacities,
)
from .queueing import (
    AdaptiveConfig,
    AdaptiveRunTrace,
    FixedRunTrace,
    StabilityReport,
    adaptive_equilibrium_queue,
    adaptive_params,
    default_warmup,
    fugacity_band_area,
    per_queue_bound,
    queue_step,
    sample_arrivals,
    simulate_adaptive,
    simulate_fixed,
    stability_diagnostic,
)
from .rng import GENERATOR_NAME, STREAM_TAGS, SimStreams, make_stream

__version__ = "0.1.0"
