"""System parameters, per-slot budgets, and exact schedule bookkeeping.

All partition arithmetic is exact: counts are ints, probabilities are
`fractions.Fraction`.  Floats appear only in power/noise quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction

from .errors import (
    DeadlineShorterThanSuperframe,
    InfeasibleSchedule,
    KExceedsAntennas,
    TrainingOverheadExceedsSlot,
)

__all__ = [
    "CsiMode",
    "SystemParams",
    "DerivedBudget",
    "GroupSplit",
    "DeadlineSplit",
    "derive_budget",
    "superframe_partition",
    "deadline_partition",
]


class CsiMode(Enum):
    """How much the transmitter knows about the channel when beamforming."""

    IDEAL = "ideal"
    IMPERFECT = "imperfect_csi"
    IMPERFECT_FBL = "imperfect_csi_fbl"

    @property
    def uses_estimation(self) -> bool:
        return self is not CsiMode.IDEAL

    @property
    def finite_blocklength(self) -> bool:
        return self is CsiMode.IMPERFECT_FBL


@dataclass(frozen=True)
class SystemParams:
    """Static description of one downlink scenario.

    Powers are linear (not dB).  ``n_slot_symbols`` is the total symbol
    budget of one slot; training for the co-scheduled users is carved out
    of it unless the CSI mode is ideal.  ``arrival_rate`` is in bits per
    slot and ``deadline`` in slots.
    """

    n_antennas: int
    n_users_total: int
    superframe_len: int
    n_slot_symbols: int
    n_ul_train: int
    n_dl_train: int
    p_total: float
    p_uplink: float
    arrival_rate: float
    deadline: int
    csi_mode: CsiMode

    def __post_init__(self):
        for name in ("n_antennas", "n_users_total", "superframe_len", "n_slot_symbols"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        for name in ("n_ul_train", "n_dl_train", "deadline"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
        if not self.p_total > 0:
            raise ValueError(f"p_total must be positive, got {self.p_total!r}")
        if self.p_uplink < 0:
            raise ValueError(f"p_uplink must be nonnegative, got {self.p_uplink!r}")
        if self.arrival_rate < 0:
            raise ValueError(f"arrival_rate must be nonnegative, got {self.arrival_rate!r}")
        if not isinstance(self.csi_mode, CsiMode):
            raise ValueError(f"csi_mode must be a CsiMode, got {self.csi_mode!r}")

    def with_superframe(self, superframe_len: int) -> "SystemParams":
        return replace(self, superframe_len=superframe_len)


@dataclass(frozen=True)
class DerivedBudget:
    """Per-slot resource accounting for a group of k co-scheduled users."""

    k_sched: int
    n_data: int
    m: int
    p_per_user: float
    sigma_e_sq: float


@dataclass(frozen=True)
class GroupSplit:
    """How one superframe splits its users into two slot groups.

    Slots in group A carry ``k_a`` users each, group B carries ``k_b``;
    ``p_a`` is the probability that a uniformly chosen user lands in an
    A slot.  When the average loading is an integer the split degenerates
    to a single group (t_b = 0, p_a = 1).
    """

    k_a: int
    k_b: int
    t_a: int
    t_b: int
    p_a: Fraction
    p_b: Fraction

    @property
    def k_avg(self) -> Fraction:
        return Fraction(self.k_a * self.t_a + self.k_b * self.t_b, self.t_a + self.t_b)


@dataclass(frozen=True)
class DeadlineSplit:
    """Service opportunities available within a deadline window.

    Depending on where the tagged user's slot falls inside the superframe,
    a window of ``w`` slots spans either ``n_frames_hi`` = ceil(w/T) or
    ``n_frames_lo`` = floor(w/T) scheduling opportunities; ``p_group2``
    is the (exact) probability of the lucky ceil case: mod(w,T) of the T
    equally likely slot phases catch the extra opportunity.
    """

    n_frames_hi: int
    n_frames_lo: int
    p_group2: Fraction
    p_group1: Fraction


def derive_budget(params: SystemParams, k_sched: int) -> DerivedBudget:
    """Resource budget when k_sched users share one slot.

    Training overhead (uplink sounding plus downlink demodulation pilots)
    scales with the number of co-scheduled users and vanishes in the ideal
    CSI mode.  Raises KExceedsAntennas when zero-forcing cannot separate
    the users and TrainingOverheadExceedsSlot when no data symbols remain.
    """
    if not isinstance(k_sched, int) or k_sched < 1:
        raise ValueError(f"k_sched must be a positive integer, got {k_sched!r}")
    if k_sched > params.n_antennas:
        raise KExceedsAntennas(
            f"cannot zero-force {k_sched} users with {params.n_antennas} antennas"
        )
    if params.csi_mode.uses_estimation:
        overhead = k_sched * (params.n_ul_train + params.n_dl_train)
        sigma_e_sq = 1.0 / (1.0 + params.p_uplink * params.n_ul_train)
    else:
        overhead = 0
        sigma_e_sq = 0.0
    n_data = params.n_slot_symbols - overhead
    if n_data <= 0:
        raise TrainingOverheadExceedsSlot(
            f"training for {k_sched} users needs {overhead} symbols, "
            f"slot has {params.n_slot_symbols}"
        )
    return DerivedBudget(
        k_sched=k_sched,
        n_data=n_data,
        m=params.n_antennas - k_sched + 1,
        p_per_user=params.p_total / k_sched,
        sigma_e_sq=sigma_e_sq,
    )


def superframe_partition(params: SystemParams) -> GroupSplit:
    """Split one superframe so every user is scheduled exactly once.

    With K users and T slots the loading K/T is generally fractional, so
    some slots carry ceil(K/T) users and the rest floor(K/T).  All counts
    and probabilities are exact.
    """
    k_tot, t = params.n_users_total, params.superframe_len
    if t > k_tot:
        raise InfeasibleSchedule(
            f"superframe of {t} slots cannot be filled by {k_tot} users "
            "(every slot must serve at least one user)"
        )
    k_b, rem = divmod(k_tot, t)
    k_a = k_b + (1 if rem else 0)
    if k_a > params.n_antennas:
        raise InfeasibleSchedule(
            f"loading {k_tot}/{t} requires slots with {k_a} users, "
            f"above the {params.n_antennas}-antenna zero-forcing limit"
        )
    if rem == 0:
        return GroupSplit(k_a, k_b, t, 0, Fraction(1), Fraction(0))
    t_a = k_tot - t * k_b
    t_b = t - t_a
    p_a = Fraction(k_a * t_a, k_tot)
    return GroupSplit(k_a, k_b, t_a, t_b, p_a, 1 - p_a)


def deadline_partition(deadline: int, superframe_len: int) -> DeadlineSplit:
    """Count scheduling opportunities inside a deadline window.

    The tagged user's slot position within its superframe is uniform, so
    the window covers ceil(w/T) opportunities with probability mod(w,T)/T
    and floor(w/T) otherwise.
    """
    w, t = deadline, superframe_len
    if w < t:
        raise DeadlineShorterThanSuperframe(
            f"deadline of {w} slots is below one superframe ({t} slots)"
        )
    rem = w % t
    hi = math.ceil(w / t)
    lo = w // t
    p2 = Fraction(rem, t)
    return DeadlineSplit(n_frames_hi=hi, n_frames_lo=lo, p_group2=p2, p_group1=1 - p2)
