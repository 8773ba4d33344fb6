"""Exception types shared across the package."""


class ZfdelayError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ZfdelayError, ValueError):
    """A numeric kernel was called outside its mathematical domain."""


class KExceedsAntennas(ZfdelayError, ValueError):
    """More users scheduled per slot than transmit antennas can separate."""


class TrainingOverheadExceedsSlot(ZfdelayError, ValueError):
    """Training symbols for the scheduled users do not fit in one slot."""


class InfeasibleSchedule(ZfdelayError, ValueError):
    """No valid per-slot user assignment exists for the requested frame."""


class DeadlineShorterThanSuperframe(ZfdelayError, ValueError):
    """Deadline windows below one superframe cannot be partitioned."""


class SingularEstimate(ZfdelayError, RuntimeError):
    """Drawn channel-estimate matrix too ill-conditioned to invert."""


class RejectionBudgetExhausted(ZfdelayError, RuntimeError):
    """Conditioned sampling failed to hit the target window in budget."""


class NonPositiveRate(ZfdelayError, ValueError):
    """Outage/error evaluation requires a strictly positive rate."""


class PolicyGridMismatch(ZfdelayError, ValueError):
    """A rate policy was applied to a grid it was not built for."""


class AllCandidatesUnstable(ZfdelayError, RuntimeError):
    """Every candidate policy yields an unstable queue at this load."""


class NoFeasibleSchedule(ZfdelayError, ValueError):
    """No schedule satisfies the spatial and deadline constraints."""


class ConfigError(ZfdelayError, ValueError):
    """Scenario configuration failed validation."""
