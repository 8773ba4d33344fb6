"""Slot-level FIFO queue simulation for one tagged user.

Arrivals are fluid at ``alpha`` bits per slot; service is impulsive at
the user's scheduled slot, once per superframe, with capacity drawn from
one of three service models (quantized policy cells, full channel Monte
Carlo, or ideal continuous rates).  A delay violation at slot t means
the bits that had arrived by the start of slot t have not all departed
by the start of slot t + w.

The departure process is a step function with one breakpoint per
superframe, so violations are counted exactly by interval arithmetic
over the breakpoints instead of per-slot loops; a slow per-slot
reference implementation is kept for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DerivedBudget, GroupSplit
from .errors import DomainError
from .numerics import chi2_scaled_sample
from .outage import fbl_error_at_sinr
from .rate_policy import RatePolicy

__all__ = [
    "QueueTrace",
    "AnalyticCellService",
    "FullChannelService",
    "IdealService",
    "simulate_queue",
    "reference_violations",
]

# Comparison slack so float-noise ties never count as violations.
_REL_TOL = 1e-12
_ABS_TOL = 1e-9


@dataclass(frozen=True)
class QueueTrace:
    n_slots: int
    violations: int
    pv_hat: float
    max_delay_seen: int
    seed: int
    n_measured: int


def _group_assignment(split: GroupSplit, n_frames: int, rng: np.random.Generator):
    """Per-frame group and slot offset for the tagged user.

    Scheduling re-randomizes each superframe: the user lands in an A seat
    with probability p_a, then uniformly within that group's slot block
    (A slots first, then B).
    """
    in_a = rng.random(n_frames) < float(split.p_a)
    offsets = np.empty(n_frames, dtype=np.int64)
    n_a = int(np.count_nonzero(in_a))
    if n_a:
        offsets[in_a] = rng.integers(0, split.t_a, size=n_a)
    if n_frames - n_a:
        offsets[~in_a] = split.t_a + rng.integers(0, max(split.t_b, 1), size=n_frames - n_a)
    return in_a, offsets


class AnalyticCellService:
    """Service drawn from the policy's own cells and error probabilities.

    Under this mode the per-frame service law *is* the quantized model
    the delay bound was computed from, so the bound provably dominates
    the simulated violation frequency (up to estimator noise).
    """

    def __init__(self, split: GroupSplit, groups: list[tuple[float, DerivedBudget, RatePolicy]]):
        if not groups:
            raise ValueError("need at least one group")
        self.split = split
        self.groups = groups

    def _draw_group(self, budget, policy, n, rng):
        cum = np.cumsum(policy.grid.probs)
        cells = np.searchsorted(cum, rng.random(n), side="right")
        cells = np.minimum(cells, policy.grid.count - 1)
        ok = rng.random(n) >= policy.errors[cells]
        return budget.n_data * policy.rates[cells] * ok

    def draw_frames(self, n_frames: int, rng: np.random.Generator):
        in_a, offsets = _group_assignment(self.split, n_frames, rng)
        bits = np.empty(n_frames)
        masks = [in_a, ~in_a] if len(self.groups) == 2 else [np.ones(n_frames, dtype=bool)]
        for (_, budget, policy), mask in zip(self.groups, masks):
            n = int(np.count_nonzero(mask))
            if n:
                bits[mask] = self._draw_group(budget, policy, n, rng)
        return bits, offsets


class FullChannelService:
    """Service drawn from fresh channel matrices each superframe.

    Each frame draws an estimate, quantizes its signal-power scale onto
    the policy grid to pick the rate, then reveals a true channel and
    scores success either by outage (capacity above rate) or by a
    finite-blocklength error coin.
    """

    def __init__(
        self,
        split: GroupSplit,
        groups: list[tuple[float, DerivedBudget, RatePolicy]],
        n_antennas: int,
        *,
        finite_blocklength: bool = False,
        shrink_estimate: bool = True,
        batch: int = 8192,
    ):
        self.split = split
        self.groups = groups
        self.n_antennas = n_antennas
        self.finite_blocklength = finite_blocklength
        self.shrink_estimate = shrink_estimate
        self.batch = batch

    def _draw_group(self, budget: DerivedBudget, policy: RatePolicy, n: int, rng):
        rho = budget.p_per_user
        k = budget.k_sched
        entry_var = (1.0 - budget.sigma_e_sq) if self.shrink_estimate else 1.0
        out = np.empty(n)
        done = 0
        while done < n:
            nb = min(self.batch, n - done)
            scale = math.sqrt(entry_var / 2.0)
            h = scale * (
                rng.standard_normal((nb, self.n_antennas, k))
                + 1j * rng.standard_normal((nb, self.n_antennas, k))
            )
            gram = np.einsum("bij,bik->bjk", h.conj(), h)
            inv_gram = np.linalg.inv(gram)
            w = np.einsum("bij,bjk->bik", h, inv_gram)
            norms = np.linalg.norm(w, axis=1)  # (nb, k)
            mus = rho / norms[:, 0] ** 2
            rates = policy.rates[policy.grid.cell_of(mus)]
            if budget.sigma_e_sq > 0.0:
                v = w / norms[:, None, :]
                escale = math.sqrt(budget.sigma_e_sq / 2.0)
                err = escale * (
                    rng.standard_normal((nb, self.n_antennas))
                    + 1j * rng.standard_normal((nb, self.n_antennas))
                )
                proj = np.einsum("bi,bik->bk", err.conj(), v)
                sig = rho * np.abs(1.0 / norms[:, 0] + proj[:, 0]) ** 2
                interference = rho * np.sum(np.abs(proj[:, 1:]) ** 2, axis=1)
                sinr = sig / (1.0 + interference)
            else:
                sinr = mus
            if self.finite_blocklength:
                eps = fbl_error_at_sinr(sinr, np.maximum(rates, 1e-300), budget.n_data)
                ok = rng.random(nb) >= eps
            else:
                ok = np.log2(1.0 + sinr) >= rates
            out[done : done + nb] = budget.n_data * rates * ok
            done += nb
        return out

    def draw_frames(self, n_frames: int, rng: np.random.Generator):
        in_a, offsets = _group_assignment(self.split, n_frames, rng)
        bits = np.empty(n_frames)
        masks = [in_a, ~in_a] if len(self.groups) == 2 else [np.ones(n_frames, dtype=bool)]
        for (_, budget, policy), mask in zip(self.groups, masks):
            n = int(np.count_nonzero(mask))
            if n:
                bits[mask] = self._draw_group(budget, policy, n, rng)
        return bits, offsets


class IdealService:
    """Continuous capacity service under perfect channel knowledge."""

    def __init__(self, split: GroupSplit, budgets: list[tuple[float, DerivedBudget]]):
        self.split = split
        self.budgets = budgets

    def draw_frames(self, n_frames: int, rng: np.random.Generator):
        in_a, offsets = _group_assignment(self.split, n_frames, rng)
        bits = np.empty(n_frames)
        masks = [in_a, ~in_a] if len(self.budgets) == 2 else [np.ones(n_frames, dtype=bool)]
        for (_, budget), mask in zip(self.budgets, masks):
            n = int(np.count_nonzero(mask))
            if n:
                xi = chi2_scaled_sample(budget.m, n, rng)
                bits[mask] = budget.n_data * np.log2(1.0 + budget.p_per_user * xi)
        return bits, offsets


def _service_events(service, alpha, superframe_len, n_slots, rng):
    """Run the FIFO recursion; returns breakpoints (slot e, cum departed)."""
    n_frames = math.ceil(n_slots / superframe_len)
    bits, offsets = service.draw_frames(n_frames, rng)
    slots = np.arange(n_frames, dtype=np.int64) * superframe_len + offsets
    ev_slot, ev_d = [], []
    d_cur = 0.0
    for f in range(n_frames):
        e = int(slots[f])
        if e >= n_slots:
            continue
        avail = alpha * (e + 1) - d_cur
        served = min(avail, float(bits[f]))
        if served > 0.0:
            d_cur += served
            ev_slot.append(e)
            ev_d.append(d_cur)
    return np.asarray(ev_slot, dtype=np.int64), np.asarray(ev_d)


def _count_violations(ev_slot, ev_d, alpha, deadline, t_first, t_last, n_slots):
    """Exact count of measured slots t with A(t) > D(t + w).

    D is constant between breakpoints, so each interval contributes a
    contiguous integer range of violating t; endpoints are fixed up with
    the same float comparison the per-slot reference uses.
    """
    if alpha <= 0.0:
        return 0
    starts = np.concatenate(([0], ev_slot + 1))
    ends = np.concatenate((ev_slot + 1, [n_slots + 1]))
    vals = np.concatenate(([0.0], ev_d))
    val_eps = vals * (1.0 + _REL_TOL) + _ABS_TOL

    lo_t = np.floor(val_eps / alpha).astype(np.int64) + 1
    lo_t -= (alpha * (lo_t - 1) > val_eps).astype(np.int64)
    lo_t += (alpha * lo_t <= val_eps).astype(np.int64)
    lo_t = np.maximum.reduce([lo_t, starts - deadline, np.full_like(lo_t, t_first)])
    hi_t = np.minimum(ends - deadline - 1, t_last)
    return int(np.sum(np.maximum(hi_t - lo_t + 1, 0)))


def _max_delay(ev_slot, ev_d, alpha, t_first, t_last, n_slots):
    """Largest observed queueing delay over the measured slots (censored)."""
    if alpha <= 0.0:
        return 0
    ts = np.arange(t_first, t_last + 1, dtype=np.int64)
    arrived = alpha * ts
    if len(ev_slot):
        j = np.searchsorted(ev_d, arrived, side="left")
        served_at = np.where(j < len(ev_slot), ev_slot[np.minimum(j, len(ev_slot) - 1)] + 1, n_slots)
    else:
        served_at = np.full(ts.shape, n_slots, dtype=np.int64)
    served_at = np.where(arrived <= _ABS_TOL, ts, served_at)
    return int(np.max(np.maximum(served_at - ts, 0), initial=0))


def reference_violations(ev_slot, ev_d, alpha, deadline, t_first, t_last):
    """Per-slot reference for the violation count (tests only; O(n_slots))."""
    viol = 0
    d_by_slot = {}
    for e, d in zip(ev_slot, ev_d):
        d_by_slot[int(e)] = float(d)
    d_cur = 0.0
    d_of = {}
    for u in range(0, t_last + deadline + 1):
        d_of[u] = d_cur  # departures by start of slot u
        if u in d_by_slot:
            d_cur = d_by_slot[u]
    for t in range(t_first, t_last + 1):
        if alpha * t > d_of[t + deadline] * (1.0 + _REL_TOL) + _ABS_TOL:
            viol += 1
    return viol


def simulate_queue(
    service,
    *,
    alpha: float,
    superframe_len: int,
    deadline: int,
    n_slots: int,
    seed: int,
    warmup: int | None = None,
) -> QueueTrace:
    """Simulate the tagged user's queue and measure deadline violations.

    ``service`` is any object with draw_frames(n_frames, rng).  The first
    ``warmup`` slots (default 10 deadlines) are excluded from measurement,
    as are the trailing slots whose lookahead would leave the horizon.
    """
    if alpha < 0:
        raise DomainError("arrival rate must be nonnegative")
    if deadline < superframe_len:
        raise DomainError("deadline below one superframe cannot be met")
    warmup = 10 * deadline if warmup is None else warmup
    t_first = warmup
    t_last = n_slots - deadline
    if t_last < t_first:
        raise ValueError(
            f"horizon of {n_slots} slots leaves no measured slots "
            f"(warmup {warmup}, deadline {deadline})"
        )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    ev_slot, ev_d = _service_events(service, alpha, superframe_len, n_slots, rng)
    violations = _count_violations(ev_slot, ev_d, alpha, deadline, t_first, t_last, n_slots)
    max_delay = _max_delay(ev_slot, ev_d, alpha, t_first, t_last, n_slots)
    n_measured = t_last - t_first + 1
    return QueueTrace(
        n_slots=n_slots,
        violations=violations,
        pv_hat=violations / n_measured,
        max_delay_seen=max_delay,
        seed=seed,
        n_measured=n_measured,
    )
