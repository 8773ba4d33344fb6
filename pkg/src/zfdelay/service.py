"""Per-frame service models and their Laplace/Mellin characteristics.

A tagged user is served once per superframe; the bits delivered in that
slot form an i.i.d. per-frame service process.  Queueing bounds need
E[exp(-s * service_bits)] — returned here as ``log_value(s)`` evaluators
wrapped in :class:`ServiceMellin` — plus the mean service for stability
accounting.  Three models:

* ideal CSI: service n_data * log2(1 + rho * xi) with the exact
  closed-form transform (alternating incomplete-gamma series, evaluated
  as a signed log-sum);
* quantized rate policy: a discrete signal-power grid with per-cell rate
  and predicted error probability;
* mixture across slot groups of a superframe split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaincinv, gammaln, logsumexp

from .config import DerivedBudget
from .errors import DomainError, PolicyGridMismatch
from .numerics import chi2_scaled_pdf, log_upper_incomplete_gamma, signed_logsumexp

__all__ = [
    "MuGrid",
    "build_mu_grid",
    "ServiceMellin",
    "log_mellin_ideal",
    "mellin_ideal",
    "ideal_service_mellin",
    "quantized_service_mellin",
    "mixed_service_mellin",
    "expected_service",
    "mean_rate_ideal",
]

LN2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class MuGrid:
    """Discretization of the signal-power scale for one user group.

    ``points`` are cell representatives (quantile midpoints), ``probs``
    the exact cell masses, ``edges`` the cell boundaries used to map
    continuous draws onto cells.
    """

    points: np.ndarray
    probs: np.ndarray
    count: int
    edges: np.ndarray

    def __post_init__(self):
        if len(self.points) != self.count or len(self.probs) != self.count:
            raise ValueError("grid arrays must match the declared count")
        if len(self.edges) != self.count + 1:
            raise ValueError("edges must have count + 1 entries")
        if np.any(np.diff(self.points) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError("cell probabilities must sum to 1")

    def cell_of(self, mu):
        """Map signal-power values onto cell indices (tails clamp inward)."""
        idx = np.searchsorted(self.edges[1:-1], mu, side="right")
        return np.clip(idx, 0, self.count - 1)


def build_mu_grid(
    budget: DerivedBudget,
    n_cells: int = 512,
    *,
    shrink_estimate: bool = True,
    tail_quantile: float = 1.0 - 1e-9,
) -> MuGrid:
    """Quantile grid of the signal-power scale rho * |radial gain|^2.

    The post-beamforming gain is Gamma(m, 1) distributed; the grid places
    equal probability 1/n_cells in every cell and represents each cell by
    its probability midpoint.  The last edge is capped at ``tail_quantile``
    to stay finite; draws beyond it clamp into the last cell.
    """
    if n_cells < 2:
        raise ValueError("need at least two grid cells")
    scale = budget.p_per_user * ((1.0 - budget.sigma_e_sq) if shrink_estimate else 1.0)
    if not scale > 0:
        raise DomainError("nonpositive power scale; check budget")
    mids = (np.arange(n_cells) + 0.5) / n_cells
    qedges = np.arange(1, n_cells) / n_cells
    points = scale * gammaincinv(budget.m, mids)
    edges = np.concatenate(
        ([0.0], scale * gammaincinv(budget.m, qedges), [scale * gammaincinv(budget.m, tail_quantile)])
    )
    probs = np.full(n_cells, 1.0 / n_cells)
    return MuGrid(points=points, probs=probs, count=n_cells, edges=edges)


@dataclass(frozen=True, eq=False)
class ServiceMellin:
    """E[exp(-s * per-frame service bits)] plus the mean for stability checks."""

    model_tag: str
    bits_per_frame: float
    _log_value: Callable[[float], float] = field(repr=False)

    def log_value(self, s: float) -> float:
        """ln E[e^(-s S)] for s >= 0; always <= 0."""
        if s < 0:
            raise DomainError("transform argument s must be nonnegative")
        return min(self._log_value(float(s)), 0.0)

    def value(self, s: float) -> float:
        return math.exp(self.log_value(s))


def _log_mellin_ideal_quad(m: int, rho: float, s_tilde: float) -> float:
    """ln E[(1+rho*xi)^(-s_tilde)] by quadrature, robust at large s_tilde.

    Substituting u = s_tilde * ln(1 + rho*xi) puts the sharp power-law
    factor on the unit exponential scale, so the integrand never hides a
    spike from the adaptive rule.
    """
    lognorm = gammaln(m)

    def integrand(u):
        t = np.minimum(u / s_tilde, 700.0)  # past this the e^-xi factor is an exact 0
        xi = np.expm1(t) / rho
        if m == 1:
            log_f = 0.0
        else:
            with np.errstate(divide="ignore"):
                log_f = np.where(xi > 0, (m - 1) * np.log(np.where(xi > 0, xi, 1.0)), -np.inf)
        with np.errstate(invalid="ignore"):
            out = np.exp(-u + log_f - xi + t - lognorm)
        return np.where(xi >= 1e280, 0.0, out)

    val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=400)
    scale = val / (s_tilde * rho)
    if scale <= 0.0:
        raise DomainError(
            f"transform quadrature underflowed (m={m}, rho={rho}, s_tilde={s_tilde})"
        )
    return math.log(scale)


# Alternating incomplete-gamma sums cancel more digits as the exponent
# grows, amplifying the ~1e-12 accuracy of the individual incomplete-gamma
# terms; past ~3 lost digits (or an outright sign flip) the closed form
# can no longer hit 1e-9 and quadrature takes over.
_SERIES_CANCEL_LIMIT = 7.0


def log_mellin_ideal(budget: DerivedBudget, s: float) -> float:
    """ln E[(1 + rho*xi)^(-s*n_data/ln 2)] for the ideal-CSI service.

    Closed form: binomially expanding the gain density against the power
    term leaves one upper-incomplete-gamma per term; the alternating sum
    is accumulated as a signed log-sum.  When that sum cancels away its
    precision (large exponents), a substituted quadrature replaces it.
    """
    if s < 0:
        raise DomainError("transform argument s must be nonnegative")
    if s == 0:
        return 0.0
    m, rho = budget.m, budget.p_per_user
    s_tilde = s * budget.n_data / LN2
    x = 1.0 / rho
    log_rho = math.log(rho)
    logs = np.empty(m)
    signs = np.empty(m)
    for ell in range(m):
        lc = gammaln(m) - gammaln(ell + 1) - gammaln(m - ell)  # ln C(m-1, ell)
        lg = log_upper_incomplete_gamma(m - ell - s_tilde, x)
        logs[ell] = lc - gammaln(m) - (ell + s_tilde) * log_rho + x + lg
        signs[ell] = -1.0 if ell % 2 else 1.0
    total, sign = signed_logsumexp(logs, signs)
    if sign <= 0 or logs.max() - total > _SERIES_CANCEL_LIMIT:
        return float(min(_log_mellin_ideal_quad(m, rho, s_tilde), 0.0))
    return float(min(total, 0.0))


def mellin_ideal(budget: DerivedBudget, s: float) -> float:
    return math.exp(log_mellin_ideal(budget, s))


def mean_rate_ideal(budget: DerivedBudget) -> float:
    """E[log2(1 + rho*xi)] in bits/symbol under ideal CSI (quadrature)."""
    rho, m = budget.p_per_user, budget.m

    def integrand(xi):
        return np.log2(1.0 + rho * xi) * chi2_scaled_pdf(m, xi)

    val, _ = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def ideal_service_mellin(budget: DerivedBudget) -> ServiceMellin:
    bits = budget.n_data * mean_rate_ideal(budget)
    return ServiceMellin(
        model_tag="ideal",
        bits_per_frame=bits,
        _log_value=lambda s: log_mellin_ideal(budget, s),
    )


def quantized_service_mellin(
    grid: MuGrid,
    rates: np.ndarray,
    errors: np.ndarray,
    n_data: int,
    *,
    model_tag: str = "quantized_policy",
) -> ServiceMellin:
    """Transform of a per-cell rate policy with per-cell failure probability.

    A frame on cell i delivers n_data * rates[i] bits with probability
    1 - errors[i] and nothing otherwise.
    """
    rates = np.asarray(rates, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if rates.shape != (grid.count,) or errors.shape != (grid.count,):
        raise PolicyGridMismatch(
            f"policy arrays of shape {rates.shape}/{errors.shape} do not "
            f"match a {grid.count}-cell grid"
        )
    if np.any(rates < 0) or np.any((errors < 0) | (errors > 1)):
        raise DomainError("rates must be >= 0 and errors within [0, 1]")
    probs = grid.probs
    bits = float(n_data * np.sum(probs * (1.0 - errors) * rates))
    fail_mass = float(np.sum(probs * errors))
    bits_scale = n_data * rates

    def log_value(s: float) -> float:
        val = float(np.sum(probs * (1.0 - errors) * np.exp(-s * bits_scale))) + fail_mass
        if val <= 0.0:
            return -math.inf
        return math.log(val)

    return ServiceMellin(model_tag=model_tag, bits_per_frame=bits, _log_value=log_value)


def mixed_service_mellin(components: Sequence[tuple[float, ServiceMellin]]) -> ServiceMellin:
    """Probability mixture of per-group service models (exactly linear)."""
    weights = np.array([float(w) for w, _ in components], dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    live = [(w, sm) for w, sm in zip(weights, (sm for _, sm in components)) if w > 0]
    bits = sum(w * sm.bits_per_frame for w, sm in live)
    log_w = [math.log(w) for w, _ in live]

    def log_value(s: float) -> float:
        vals = [lw + sm.log_value(s) for lw, (_, sm) in zip(log_w, live)]
        return float(logsumexp(vals))

    return ServiceMellin(model_tag="mixed_groups", bits_per_frame=bits, _log_value=log_value)


def expected_service(sm: ServiceMellin, superframe_len: int) -> float:
    """Long-run mean service rate in bits per slot."""
    if superframe_len < 1:
        raise ValueError("superframe length must be positive")
    return sm.bits_per_frame / superframe_len
