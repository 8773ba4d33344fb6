"""Closed-form outage and decoding-error approximations.

After zero-forcing on an imperfect channel estimate, the tagged user's
SINR is modelled as G / (1 + I): a Gaussian signal-power surrogate G with
mean ``mu`` and variance ``sigma_s_sq``, over residual interference I that
is a sum of ``nu`` independent exponentials.  Treating the interference
as independent of G gives a lower estimate of the outage probability;
collapsing it onto a single exponential with the combined mean gives an
upper one.  Finite-blocklength decoding widens the signal surrogate by
the channel-dispersion term and reuses the same tail machinery.

Everything here is vectorized over broadcastable ``mu``/``rate`` arrays
and evaluated in the log domain so that reliability levels far below
float underflow remain exact in the log.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .config import DerivedBudget
from .errors import DomainError, NonPositiveRate
from .numerics import gaussian_tail, log_gaussian_tail, signed_logsumexp

__all__ = [
    "EstimateStats",
    "estimate_stats",
    "dispersion_iid",
    "dispersion_awgn",
    "fbl_sigma_sq",
    "b_integral",
    "log_b_integral",
    "pout_lower",
    "pout_upper",
    "fbl_error_upper",
    "fbl_error_uncorrelated",
    "fbl_error_at_sinr",
    "clamp_counts",
    "reset_clamp_counts",
]

LOG2E_SQ = math.log2(math.e) ** 2
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Numerical clamps (values pushed back into [0, 1] or series signs that
# collapsed under cancellation) are counted here so callers can audit them.
_CLAMP_COUNTS: Counter = Counter()


def clamp_counts() -> dict:
    return dict(_CLAMP_COUNTS)


def reset_clamp_counts() -> None:
    _CLAMP_COUNTS.clear()


def dispersion_iid(snr):
    """Channel dispersion (bits^2) of the i.i.d. fading-adapted code ensemble."""
    snr = np.asarray(snr, dtype=float)
    out = (2.0 * snr / (1.0 + snr)) * LOG2E_SQ
    return out if out.ndim else float(out)


def dispersion_awgn(snr):
    """Channel dispersion (bits^2) of the coherent AWGN channel."""
    snr = np.asarray(snr, dtype=float)
    out = (1.0 - (1.0 + snr) ** -2) * LOG2E_SQ
    return out if out.ndim else float(out)


def fbl_sigma_sq(mu, sigma_s_sq, lambda_c, n_data):
    """Signal-surrogate variance inflated by finite-blocklength dispersion.

    The decoding penalty at blocklength n is folded into the Gaussian
    signal model by adding the linearized dispersion of the effective
    SINR mu / (1 + lambda_c); an infinite n leaves the variance untouched.
    """
    mu = np.asarray(mu, dtype=float)
    eff_snr = mu / (1.0 + lambda_c)
    extra = (1.0 + lambda_c + mu) ** 2 * dispersion_iid(eff_snr) / (n_data * LOG2E_SQ)
    out = np.asarray(sigma_s_sq, dtype=float) + extra
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class EstimateStats:
    """Moments of the SINR surrogate for one channel estimate (or a grid).

    Fields may be scalars or broadcastable arrays.  ``n_data`` is the
    coding blocklength; ``math.inf`` marks the asymptotic (outage-only)
    regime, in which case ``sigma_cf_sq == sigma_s_sq`` exactly.
    """

    mu: object
    sigma_s_sq: object
    nu: int
    lambda_u: float
    lambda_c: float
    n_data: float
    sigma_cf_sq: object


def estimate_stats(budget: DerivedBudget, mu, *, finite_blocklength: bool = False) -> EstimateStats:
    """Build surrogate moments for signal-power scale ``mu`` under ``budget``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise DomainError("signal-power scale mu must be positive")
    sigma_s_sq = 2.0 * budget.sigma_e_sq * budget.p_per_user * mu
    nu = budget.k_sched - 1
    lambda_u = budget.p_per_user * budget.sigma_e_sq
    n_data = float(budget.n_data) if finite_blocklength else math.inf
    sigma_cf_sq = fbl_sigma_sq(mu, sigma_s_sq, nu * lambda_u, n_data)
    return EstimateStats(
        mu=mu if mu.ndim else float(mu),
        sigma_s_sq=sigma_s_sq if np.ndim(sigma_s_sq) else float(sigma_s_sq),
        nu=nu,
        lambda_u=lambda_u,
        lambda_c=nu * lambda_u,
        n_data=n_data,
        sigma_cf_sq=sigma_cf_sq if np.ndim(sigma_cf_sq) else float(sigma_cf_sq),
    )


def _check_order(order: int) -> None:
    if not isinstance(order, (int, np.integer)) or order < 0:
        raise DomainError(f"moment order must be a nonnegative integer, got {order!r}")


def log_b_integral(order: int, x, sigma_sq):
    """ln of B_l(x) = integral of t^l N(0, sigma_sq)(t) dt over [x, inf).

    B_l is strictly positive for every real x, so the log is well defined.
    For x <= 0 the recursion runs in the linear domain (no underflow is
    possible there); for x > 0 every term is positive and the recursion
    runs in the log domain, keeping deep tails exact.
    """
    _check_order(order)
    if not sigma_sq > 0:
        raise DomainError("sigma_sq must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((order + 1,) + x.shape)
    sigma = math.sqrt(sigma_sq)
    z = x / sigma
    log_phi = -0.5 * z * z - _HALF_LOG_2PI

    neg = x <= 0.0
    if np.any(neg):
        xn, zn = x[neg], z[neg]
        phi_term = sigma * np.exp(log_phi[neg])  # sigma^2 * pdf_N(0,sigma^2)(x)
        vals = [np.asarray(gaussian_tail(zn))]
        if order >= 1:
            vals.append(phi_term.copy())
        for l in range(2, order + 1):
            vals.append(xn ** (l - 1) * phi_term + (l - 1) * sigma_sq * vals[l - 2])
        with np.errstate(divide="ignore"):
            for l in range(order + 1):
                out[l][..., neg] = np.log(vals[l])

    pos = ~neg
    if np.any(pos):
        xp = x[pos]
        log_sigma = math.log(sigma)
        lvals = [np.asarray(log_gaussian_tail(z[pos]))]
        if order >= 1:
            lvals.append(log_sigma + log_phi[pos])
        log_xp = np.log(xp)
        for l in range(2, order + 1):
            a = (l - 1) * log_xp + log_sigma + log_phi[pos]
            b = math.log(l - 1) + 2.0 * log_sigma + lvals[l - 2]
            lvals.append(np.logaddexp(a, b))
        for l in range(order + 1):
            out[l][..., pos] = lvals[l]
    return out


def b_integral(order: int, x, sigma_sq):
    """B_l(x): the l-th partial moment of a centered Gaussian above x."""
    res = np.exp(log_b_integral(order, x, sigma_sq)[order])
    return res.item() if res.size == 1 and np.ndim(x) == 0 else res.reshape(np.shape(x))


def _as_positive_rate(rate):
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0) or np.any(~np.isfinite(rate)):
        raise NonPositiveRate("rates must be finite and strictly positive")
    return rate


def _exp_clamped(log_p, label: str):
    """exp of a log-probability, counting excursions above 1."""
    log_p = np.asarray(log_p)
    above = log_p > 1e-12
    if np.any(above):
        _CLAMP_COUNTS[label] += int(np.count_nonzero(above))
    out = np.exp(np.minimum(log_p, 0.0))
    return float(out[()]) if out.ndim == 0 else out


def _tilt_terms(mu, sig_sq, lam, gamma0):
    """Shifted mean and exponential-tilt log-prefactor shared by both tails."""
    lg = lam * gamma0
    mu_shift = mu - sig_sq / lg
    tilt = 1.0 / lam - mu / lg + sig_sq / (2.0 * lg * lg)
    return mu_shift, tilt


def _log_upper_tail(mu, sig_sq, lam, gamma0):
    sigma = np.sqrt(sig_sq)
    mu_shift, tilt = _tilt_terms(mu, sig_sq, lam, gamma0)
    return tilt + log_gaussian_tail((gamma0 - mu_shift) / sigma)


def _log_lower_tail(mu, sig_sq, lam, nu, gamma0):
    """Log of the interference-resolved tail series (nu >= 1 required)."""
    mu, sig_sq, gamma0 = np.broadcast_arrays(
        np.asarray(mu, float), np.asarray(sig_sq, float), np.asarray(gamma0, float)
    )
    sigma = np.sqrt(sig_sq)
    mu_shift, tilt = _tilt_terms(mu, sig_sq, lam, gamma0)
    base = mu_shift - gamma0
    log_lg = np.log(lam * gamma0)
    with np.errstate(divide="ignore"):
        log_abs_base = np.log(np.abs(base))

    # log B_l(gamma0 - mu_shift) for every order; sigma varies per element,
    # so run the scalar-sigma recursion per unique variance is wasteful --
    # instead inline a broadcast version of the recursion here.
    log_b = _log_b_broadcast(nu - 1, gamma0 - mu_shift, sig_sq)

    logs, signs = [], []
    for m in range(nu):
        for l in range(m + 1):
            lc = gammaln(m + 1) - gammaln(l + 1) - gammaln(m - l + 1)  # ln C(m,l)
            lmag = lc - m * log_lg - gammaln(m + 1) + log_b[l]
            if m - l:
                lmag = lmag + (m - l) * log_abs_base
                sign = np.where(base >= 0, 1.0, -1.0 if (m - l) % 2 else 1.0)
            else:
                sign = np.ones_like(lmag)
            logs.append(lmag)
            signs.append(sign)
    total, sign = signed_logsumexp(np.stack(logs), np.stack(signs), axis=0)
    bad = sign <= 0
    if np.any(bad):
        _CLAMP_COUNTS["lower_series_cancelled"] += int(np.count_nonzero(bad))
        total = np.where(bad, -np.inf, total)
    return tilt + total


def _log_b_broadcast(order: int, x, sig_sq):
    """log B_l for l = 0..order with elementwise variances (broadcast arrays)."""
    x = np.asarray(x, float)
    sig_sq = np.broadcast_to(np.asarray(sig_sq, float), x.shape)
    sigma = np.sqrt(sig_sq)
    z = x / sigma
    log_phi = -0.5 * z * z - _HALF_LOG_2PI
    log_sigma = 0.5 * np.log(sig_sq)
    out = [np.asarray(log_gaussian_tail(z))]
    if order >= 1:
        out.append(log_sigma + log_phi)
    if order >= 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            log_abs_x = np.where(x == 0.0, -np.inf, np.log(np.abs(x)))
        neg_x = x < 0
        for l in range(2, order + 1):
            direct = (l - 1) * log_abs_x + log_sigma + log_phi
            carry = math.log(l - 1) + 2.0 * log_sigma + out[l - 2]
            if l % 2 == 0:  # x^(l-1) negative for x < 0: direct term subtracts
                stacked, sgn = signed_logsumexp(
                    np.stack([carry, direct]),
                    np.stack([np.ones_like(carry), np.where(neg_x, -1.0, 1.0)]),
                    axis=0,
                )
                stacked = np.where(sgn <= 0, -np.inf, stacked)
                out.append(stacked)
            else:
                out.append(np.logaddexp(direct, carry))
    return out


def _require_positive(name, value):
    if not np.all(np.asarray(value) > 0):
        raise DomainError(f"{name} must be positive for this evaluation")


def pout_lower(stats: EstimateStats, rate):
    """Outage probability treating interference as independent of the signal.

    This resolves the interference sum term by term and lies below the
    true outage of the surrogate model.  Exact in the log domain; returns
    probabilities clipped to [0, 1] (clips are counted).
    """
    rate = _as_positive_rate(rate)
    gamma0 = np.exp2(rate) - 1.0
    _require_positive("sigma_s_sq", stats.sigma_s_sq)
    sigma = np.sqrt(np.asarray(stats.sigma_s_sq, float))
    lt1 = log_gaussian_tail((stats.mu - gamma0) / sigma)
    if stats.nu == 0:
        return _exp_clamped(lt1, "lower_above_one")
    _require_positive("lambda_u", stats.lambda_u)
    lt2 = _log_lower_tail(stats.mu, stats.sigma_s_sq, stats.lambda_u, stats.nu, gamma0)
    return _exp_clamped(np.logaddexp(lt1, lt2), "lower_above_one")


def _pout_upper_core(mu, sig_sq, lam_c, nu, gamma0, label):
    _require_positive("sigma variance", sig_sq)
    sigma = np.sqrt(np.asarray(sig_sq, float))
    lt1 = log_gaussian_tail((mu - gamma0) / sigma)
    if nu == 0:
        return _exp_clamped(lt1, label)
    _require_positive("lambda_c", lam_c)
    lt2 = _log_upper_tail(mu, sig_sq, lam_c, gamma0)
    return _exp_clamped(np.logaddexp(lt1, lt2), label)


def pout_upper(stats: EstimateStats, rate):
    """Outage probability with the interference collapsed onto its sum.

    Correlating the interference terms maximizes the outage of the
    surrogate model, so this lies above `pout_lower`; for nu = 1 the two
    coincide identically.
    """
    rate = _as_positive_rate(rate)
    gamma0 = np.exp2(rate) - 1.0
    return _pout_upper_core(stats.mu, stats.sigma_s_sq, stats.lambda_c, stats.nu, gamma0, "upper_above_one")


def fbl_error_upper(stats: EstimateStats, rate):
    """Decoding-error probability at finite blocklength, upper form.

    Identical to `pout_upper` with the signal variance widened by the
    channel dispersion at blocklength ``stats.n_data``; with the infinite
    sentinel it reduces to `pout_upper` exactly.
    """
    rate = _as_positive_rate(rate)
    gamma0 = np.exp2(rate) - 1.0
    return _pout_upper_core(stats.mu, stats.sigma_cf_sq, stats.lambda_c, stats.nu, gamma0, "fbl_above_one")


def fbl_error_uncorrelated(stats: EstimateStats, rate):
    """Finite-blocklength analogue of `pout_lower`.

    Unlike the other three evaluations this one is *not* a bound in either
    direction (dispersion widening and interference resolution pull in
    opposite directions); it is exposed for curve comparisons only.
    """
    rate = _as_positive_rate(rate)
    gamma0 = np.exp2(rate) - 1.0
    _require_positive("sigma_cf_sq", stats.sigma_cf_sq)
    sigma = np.sqrt(np.asarray(stats.sigma_cf_sq, float))
    lt1 = log_gaussian_tail((stats.mu - gamma0) / sigma)
    if stats.nu == 0:
        return _exp_clamped(lt1, "fbl_above_one")
    _require_positive("lambda_u", stats.lambda_u)
    lt2 = _log_lower_tail(stats.mu, stats.sigma_cf_sq, stats.lambda_u, stats.nu, gamma0)
    return _exp_clamped(np.logaddexp(lt1, lt2), "fbl_above_one")


def fbl_error_at_sinr(sinr, rate, n_data):
    """Normal-approximation block error probability at a realized SINR."""
    rate = _as_positive_rate(rate)
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise DomainError("SINR must be nonnegative")
    if not n_data > 0:
        raise DomainError("blocklength must be positive")
    cap = np.log2(1.0 + sinr)
    disp = dispersion_iid(sinr)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = (cap - rate) / np.sqrt(disp / n_data)
    arg = np.where(disp == 0.0, np.where(cap >= rate, np.inf, -np.inf), arg)
    out = gaussian_tail(arg)
    return float(out[()]) if np.ndim(out) == 0 else out
