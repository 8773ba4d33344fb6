"""Delay-violation bounds for zero-forcing multiuser downlinks.

The package evaluates closed-form service characterizations for a
multi-antenna broadcast channel under ideal and estimated channel
knowledge (with an optional finite-blocklength penalty), feeds them
through a frame-level queueing bound, and cross-checks both layers
with Monte-Carlo channel and queue simulations.
"""

__version__ = "0.1.0"

from .config import (
    CsiMode,
    DeadlineSplit,
    DerivedBudget,
    GroupSplit,
    SystemParams,
    deadline_partition,
    derive_budget,
    superframe_partition,
)
from .delay import (
    DelayBoundResult,
    KernelTerm,
    kernel,
    log_kernel,
    optimize_s,
    optimize_schedule,
    pv_bound,
    scan_expected_service,
)
from .errors import (
    AllCandidatesUnstable,
    ConfigError,
    DeadlineShorterThanSuperframe,
    DomainError,
    InfeasibleSchedule,
    KExceedsAntennas,
    NoFeasibleSchedule,
    NonPositiveRate,
    PolicyGridMismatch,
    RejectionBudgetExhausted,
    SingularEstimate,
    TrainingOverheadExceedsSlot,
    ZfdelayError,
)
from .outage import (
    EstimateStats,
    b_integral,
    dispersion_awgn,
    dispersion_iid,
    estimate_stats,
    fbl_error_at_sinr,
    fbl_error_uncorrelated,
    fbl_error_upper,
    fbl_sigma_sq,
    pout_lower,
    pout_upper,
)
from .rate_policy import (
    PolicyFamily,
    RatePolicy,
    error_table,
    load_policy,
    optimize_policy,
    optimize_rate_for_s,
    policy_service_mellin,
    rate_grid_for,
    save_policy,
    throughput_policy,
)
from .service import (
    MuGrid,
    ServiceMellin,
    build_mu_grid,
    expected_service,
    ideal_service_mellin,
    log_mellin_ideal,
    mean_rate_ideal,
    mellin_ideal,
    mixed_service_mellin,
    quantized_service_mellin,
)
from .queue_sim import (
    AnalyticCellService,
    FullChannelService,
    IdealService,
    QueueTrace,
    reference_violations,
    simulate_queue,
)

__all__ = [
    "__version__",
    # configuration
    "CsiMode",
    "SystemParams",
    "DerivedBudget",
    "GroupSplit",
    "DeadlineSplit",
    "derive_budget",
    "superframe_partition",
    "deadline_partition",
    # outage / decoding error
    "EstimateStats",
    "estimate_stats",
    "pout_lower",
    "pout_upper",
    "fbl_error_upper",
    "fbl_error_uncorrelated",
    "fbl_error_at_sinr",
    "fbl_sigma_sq",
    "dispersion_iid",
    "dispersion_awgn",
    "b_integral",
    # service characterizations
    "MuGrid",
    "ServiceMellin",
    "build_mu_grid",
    "log_mellin_ideal",
    "mellin_ideal",
    "mean_rate_ideal",
    "ideal_service_mellin",
    "quantized_service_mellin",
    "mixed_service_mellin",
    "expected_service",
    # delay bound
    "KernelTerm",
    "DelayBoundResult",
    "log_kernel",
    "kernel",
    "pv_bound",
    "optimize_s",
    "optimize_schedule",
    "scan_expected_service",
    # rate policies
    "RatePolicy",
    "PolicyFamily",
    "rate_grid_for",
    "error_table",
    "optimize_rate_for_s",
    "throughput_policy",
    "optimize_policy",
    "policy_service_mellin",
    "save_policy",
    "load_policy",
    # queue simulation
    "QueueTrace",
    "AnalyticCellService",
    "FullChannelService",
    "IdealService",
    "simulate_queue",
    "reference_violations",
    # errors
    "ZfdelayError",
    "DomainError",
    "ConfigError",
    "KExceedsAntennas",
    "TrainingOverheadExceedsSlot",
    "InfeasibleSchedule",
    "DeadlineShorterThanSuperframe",
    "NonPositiveRate",
    "PolicyGridMismatch",
    "NoFeasibleSchedule",
    "SingularEstimate",
    "RejectionBudgetExhausted",
    "AllCandidatesUnstable",
]
