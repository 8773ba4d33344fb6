"""Rate adaptation over a quantized signal-power grid.

A policy assigns one code rate to every grid cell, trading throughput
against the predicted decoding-failure probability from the closed-form
bounds.  Policies come in two flavors: throughput-optimal (maximize mean
delivered bits, the small-s limit) and kernel-optimal at a given
transform argument s (minimize the per-frame factor of the delay-bound
kernel, which is how delay-targeted operating points are found).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import DerivedBudget, GroupSplit, SystemParams, derive_budget
from .delay import DelayBoundResult, optimize_s
from .errors import AllCandidatesUnstable, DomainError, PolicyGridMismatch
from .outage import estimate_stats, fbl_error_upper, pout_lower, pout_upper
from .service import MuGrid, ServiceMellin, build_mu_grid, mixed_service_mellin, quantized_service_mellin

__all__ = [
    "BOUND_KINDS",
    "RatePolicy",
    "rate_grid_for",
    "error_table",
    "optimize_rate_for_s",
    "throughput_policy",
    "policy_service_mellin",
    "PolicyFamily",
    "optimize_policy",
    "save_policy",
    "load_policy",
]

logger = logging.getLogger(__name__)

# Which closed-form error predictor drives the policy.  The first two are
# true upper estimates of the failure probability; the last resolves the
# interference sum and is *not* a bound (exposed for comparisons only).
BOUND_KINDS = ("upper_correlated", "fbl_upper_correlated", "lower_uncorrelated")


@dataclass(frozen=True, eq=False)
class RatePolicy:
    """Per-cell rates and predicted failure probabilities on a MuGrid."""

    grid: MuGrid
    rates: np.ndarray
    errors: np.ndarray
    s_used: float | None
    bound_kind: str

    def __post_init__(self):
        if self.rates.shape != (self.grid.count,) or self.errors.shape != (self.grid.count,):
            raise PolicyGridMismatch("policy arrays do not match the grid")
        if np.any(np.diff(self.rates) < -1e-12):
            raise ValueError("policy rates must be nondecreasing in the gain")


def rate_grid_for(grid: MuGrid, n_rates: int = 400) -> np.ndarray:
    """Uniform candidate rates spanning (0, log2(1 + mu_max)].

    The zero endpoint is excluded: a zero rate is never optimal and the
    error predictors require strictly positive rates.
    """
    r_max = math.log2(1.0 + float(grid.points[-1]))
    return np.linspace(0.0, r_max, n_rates + 1)[1:]


def error_table(
    grid: MuGrid, budget: DerivedBudget, rates: np.ndarray, bound_kind: str
) -> np.ndarray:
    """Predicted failure probability for every (cell, candidate rate) pair.

    Independent of the transform argument s, so one table serves a whole
    family of kernel-optimal policies.
    """
    if bound_kind not in BOUND_KINDS:
        raise DomainError(f"unknown bound kind {bound_kind!r}")
    fbl = bound_kind == "fbl_upper_correlated"
    stats = estimate_stats(budget, grid.points[:, None], finite_blocklength=fbl)
    rates = np.asarray(rates, dtype=float)[None, :]
    if bound_kind == "upper_correlated":
        return pout_upper(stats, rates)
    if bound_kind == "fbl_upper_correlated":
        return fbl_error_upper(stats, rates)
    return pout_lower(stats, rates)


def _repair_monotone(idx: np.ndarray, rates: np.ndarray, resolution: float) -> np.ndarray:
    """Force cell rates nondecreasing; log if real violations were present."""
    chosen = rates[idx]
    drops = np.diff(chosen)
    if np.any(drops < -(resolution + 1e-12)):
        logger.warning(
            "rate policy violated monotonicity at %d cells (worst drop %.3g bits); "
            "applying isotonic repair",
            int(np.count_nonzero(drops < -(resolution + 1e-12))),
            float(-drops.min()),
        )
    return np.maximum.accumulate(idx)


def optimize_rate_for_s(
    eps_table: np.ndarray,
    rates: np.ndarray,
    n_data: int,
    s: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-optimal rate per cell at transform argument s.

    Minimizes (1 - eps) * exp(-s * n_data * r) + eps per cell; ties pick
    the smaller rate.  Returns (chosen rate indices, chosen rates is left
    to the caller via the index array).
    """
    if s <= 0:
        raise DomainError("transform argument s must be positive")
    rates = np.asarray(rates, dtype=float)
    decay = np.exp(-s * n_data * rates)[None, :]
    objective = (1.0 - eps_table) * decay + eps_table
    idx = np.argmin(objective, axis=1)
    step = float(rates[1] - rates[0]) if len(rates) > 1 else 0.0
    return _repair_monotone(idx, rates, step), objective


def _policy_from_idx(grid, rates, eps_table, idx, s_used, bound_kind) -> RatePolicy:
    cells = np.arange(grid.count)
    return RatePolicy(
        grid=grid,
        rates=rates[idx],
        errors=eps_table[cells, idx],
        s_used=s_used,
        bound_kind=bound_kind,
    )


def throughput_policy(
    grid: MuGrid, budget: DerivedBudget, bound_kind: str, *, n_rates: int = 400
) -> RatePolicy:
    """Policy maximizing expected delivered bits r * (1 - eps) per cell."""
    rates = rate_grid_for(grid, n_rates)
    eps = error_table(grid, budget, rates, bound_kind)
    goodput = rates[None, :] * (1.0 - eps)
    idx = np.argmax(goodput, axis=1)
    step = float(rates[1] - rates[0]) if len(rates) > 1 else 0.0
    idx = _repair_monotone(idx, rates, step)
    return _policy_from_idx(grid, rates, eps, idx, None, bound_kind)


def policy_service_mellin(policy: RatePolicy, n_data: int, *, model_tag: str = "quantized_policy") -> ServiceMellin:
    return quantized_service_mellin(policy.grid, policy.rates, policy.errors, n_data, model_tag=model_tag)


class PolicyFamily:
    """Caches grids and error tables per co-scheduling level.

    The expensive ingredients — the quantile grid and the (cells x rates)
    error table — depend only on how many users share the slot, not on
    the superframe length, so one cache serves a whole schedule scan.
    """

    def __init__(
        self,
        params: SystemParams,
        bound_kind: str,
        *,
        n_cells: int = 512,
        n_rates: int = 400,
        s_candidates: Sequence[float] | None = None,
        shrink_estimate: bool = True,
    ):
        if bound_kind not in BOUND_KINDS:
            raise DomainError(f"unknown bound kind {bound_kind!r}")
        self.params = params
        self.bound_kind = bound_kind
        self.n_cells = n_cells
        self.n_rates = n_rates
        self.shrink_estimate = shrink_estimate
        self.s_candidates = (
            np.asarray(s_candidates, dtype=float)
            if s_candidates is not None
            else np.geomspace(1e-3, 0.5, 7)
        )
        self._cache: dict[int, tuple[DerivedBudget, MuGrid, np.ndarray, np.ndarray]] = {}

    def _entry(self, k: int):
        if k not in self._cache:
            budget = derive_budget(self.params, k)
            grid = build_mu_grid(budget, self.n_cells, shrink_estimate=self.shrink_estimate)
            rates = rate_grid_for(grid, self.n_rates)
            table = error_table(grid, budget, rates, self.bound_kind)
            self._cache[k] = (budget, grid, rates, table)
        return self._cache[k]

    def policy_for(self, k: int, s: float | None) -> RatePolicy:
        """Kernel-optimal policy at s (throughput-optimal when s is None)."""
        budget, grid, rates, table = self._entry(k)
        if s is None:
            goodput = rates[None, :] * (1.0 - table)
            idx = np.argmax(goodput, axis=1)
            step = float(rates[1] - rates[0])
            idx = _repair_monotone(idx, rates, step)
            return _policy_from_idx(grid, rates, table, idx, None, self.bound_kind)
        idx, _ = optimize_rate_for_s(table, rates, budget.n_data, s)
        return _policy_from_idx(grid, rates, table, idx, float(s), self.bound_kind)

    def group_mellin(self, split: GroupSplit, s: float | None) -> ServiceMellin:
        """Mixture service model for a superframe split at one policy s."""
        parts = []
        for k, weight in ((split.k_a, split.p_a), (split.k_b, split.p_b)):
            if weight == 0:
                continue
            budget, _, _, _ = self._entry(k)
            policy = self.policy_for(k, s)
            parts.append((float(weight), policy_service_mellin(policy, budget.n_data)))
        if len(parts) == 1:
            return parts[0][1]
        return mixed_service_mellin(parts)

    def candidates(self, superframe_len: int, split: GroupSplit) -> list[ServiceMellin]:
        """One mixed service model per candidate policy argument.

        The throughput-optimal policy (s=None) leads the list: it carries
        the largest mean service, so expected-service scans read it off
        directly, and at light load it is usually the bound optimizer's
        pick as well.
        """
        del superframe_len  # the split carries everything needed
        models = [self.group_mellin(split, None)]
        models.extend(self.group_mellin(split, float(s)) for s in self.s_candidates)
        return models

    def group_policies(self, split: GroupSplit, s: float | None) -> list[tuple[float, DerivedBudget, RatePolicy]]:
        out = []
        for k, weight in ((split.k_a, split.p_a), (split.k_b, split.p_b)):
            if weight == 0:
                continue
            budget, _, _, _ = self._entry(k)
            out.append((float(weight), budget, self.policy_for(k, s)))
        return out


def optimize_policy(
    grid: MuGrid,
    budget: DerivedBudget,
    *,
    superframe_len: int,
    deadline: int,
    arrival_rate: float,
    bound_kind: str,
    s_candidates: Sequence[float] | None = None,
    n_rates: int = 400,
) -> tuple[RatePolicy, DelayBoundResult]:
    """Best delay-targeted policy for a single-group schedule.

    Builds the error table once, forms the kernel-optimal policy for each
    candidate argument, bounds the delay violation for each, and returns
    the winner.  Raises AllCandidatesUnstable when no candidate policy
    can carry the load.
    """
    rates = rate_grid_for(grid, n_rates)
    table = error_table(grid, budget, rates, bound_kind)
    cands = (
        np.asarray(s_candidates, dtype=float) if s_candidates is not None else np.geomspace(1e-3, 0.5, 7)
    )
    best: tuple[RatePolicy, DelayBoundResult] | None = None
    for s0 in cands:
        idx, _ = optimize_rate_for_s(table, rates, budget.n_data, float(s0))
        policy = _policy_from_idx(grid, rates, table, idx, float(s0), bound_kind)
        sm = policy_service_mellin(policy, budget.n_data)
        res = optimize_s(sm, arrival_rate, superframe_len, deadline)
        if not res.stable:
            continue
        if best is None or res.pv_bound < best[1].pv_bound:
            best = (policy, res)
    if best is None:
        raise AllCandidatesUnstable(
            f"no candidate policy is stable at arrival rate {arrival_rate} bits/slot"
        )
    return best


_POLICY_FORMAT = "zfdelay-policy v1"


def save_policy(policy: RatePolicy, path) -> None:
    """Write a policy as versioned CSV (grid, masses, rates, errors)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_POLICY_FORMAT}\n")
        fh.write(f"# bound_kind={policy.bound_kind}\n")
        fh.write(f"# s_used={'' if policy.s_used is None else repr(policy.s_used)}\n")
        writer = csv.writer(fh)
        writer.writerow(["mu", "prob", "rate", "error", "edge_lo", "edge_hi"])
        g = policy.grid
        for i in range(g.count):
            writer.writerow(
                [
                    repr(float(g.points[i])),
                    repr(float(g.probs[i])),
                    repr(float(policy.rates[i])),
                    repr(float(policy.errors[i])),
                    repr(float(g.edges[i])),
                    repr(float(g.edges[i + 1])),
                ]
            )


def load_policy(path) -> RatePolicy:
    """Read a policy written by save_policy."""
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {_POLICY_FORMAT}":
        raise PolicyGridMismatch(f"not a {_POLICY_FORMAT} file: {path}")
    meta = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            if "=" in line:
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
            body_start = i + 1
        else:
            break
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[body_start:]))))
    points = np.array([float(r["mu"]) for r in rows])
    probs = np.array([float(r["prob"]) for r in rows])
    rates = np.array([float(r["rate"]) for r in rows])
    errors = np.array([float(r["error"]) for r in rows])
    edges = np.concatenate([[float(rows[0]["edge_lo"])], [float(r["edge_hi"]) for r in rows]])
    grid = MuGrid(points=points, probs=probs, count=len(rows), edges=edges)
    s_used = meta.get("s_used", "")
    return RatePolicy(
        grid=grid,
        rates=rates,
        errors=errors,
        s_used=None if not s_used else float(s_used),
        bound_kind=meta.get("bound_kind", "upper_correlated"),
    )
