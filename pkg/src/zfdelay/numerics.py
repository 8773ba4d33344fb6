"""Low-level numeric kernels.

Gaussian tail probabilities, the upper incomplete gamma function for real
(including negative) order, and the scaled chi-square gain density that
drives every closed-form expression in this package.  Everything standard
delegates to scipy; the one hand-rolled routine is the log-domain upper
incomplete gamma, which scipy only exposes for positive order.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as sp

from .errors import DomainError

__all__ = [
    "gaussian_tail",
    "log_gaussian_tail",
    "upper_incomplete_gamma",
    "log_upper_incomplete_gamma",
    "chi2_scaled_pdf",
    "chi2_scaled_sample",
    "signed_logsumexp",
]


def gaussian_tail(x):
    """Q(x) = P(Z > x) for standard normal Z.  Accepts scalars or arrays."""
    return sp.ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else sp.ndtr(-x)


def log_gaussian_tail(x):
    """ln Q(x), accurate far into the tail (x ~ 40 is fine)."""
    return sp.log_ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else sp.log_ndtr(-x)


def _logsubexp(la: float, lb: float) -> float:
    """ln(e^la - e^lb) assuming la >= lb; clamps to -inf on float-noise ties."""
    if lb == -math.inf:
        return la
    d = lb - la
    if d >= 0.0:
        # Mathematically la > lb on every call path; allow equality from
        # rounding to collapse to -inf rather than raise.
        if d < 1e-12:
            return -math.inf
        raise DomainError("logsubexp of a negative difference")
    return la + math.log1p(-math.exp(d))


def _log_gamma_cf(a: float, x: float) -> float:
    """ln Gamma(a, x) via the Legendre continued fraction (modified Lentz).

    Reliable when x is not small relative to a (classically x > a + 1); for
    a <= 0 it converges for any x bounded away from zero.
    """
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    if h <= 0.0:
        raise DomainError(f"continued fraction lost positivity (a={a}, x={x})")
    return -x + a * math.log(x) + math.log(h)


def _log_gamma_descend(a: float, x: float) -> float:
    """ln Gamma(a, x) for a < 0.25 by downward recurrence from a safe base.

    Uses Gamma(b, x) = (Gamma(b+1, x) - x^b e^-x) / b in log space, stepping
    from b0 = a + n in [0.25, 1.25); an exactly-zero step level is E1(x).
    """
    n = math.ceil(0.25 - a)
    b0 = a + n
    lev = sp.gammaln(b0) + math.log(sp.gammaincc(b0, x))
    lx = math.log(x)
    for k in range(1, n + 1):
        b = b0 - k
        if abs(b) < 1e-12:
            lev = math.log(sp.exp1(x))
            continue
        lpow = b * lx - x
        if b > 0:
            lev = _logsubexp(lev, lpow) - math.log(b)
        else:
            lev = _logsubexp(lpow, lev) - math.log(-b)
    return lev


def log_upper_incomplete_gamma(a: float, x: float) -> float:
    """ln Gamma(a, x) for real a and x >= 0 (x > 0 when a <= 0).

    Gamma(a, x) = integral of t^(a-1) e^-t from x to infinity is positive for
    every real a once x > 0, so the log is always defined.  Strategy:

    * a >= 0.25: scipy's regularized survival function, rescaled; if that
      underflows (huge x) fall back to the continued fraction.
    * a < 0.25 with x >= 1.5, or a <= -2: Legendre continued fraction.
    * remaining strip (small x, mildly negative a): downward recurrence
      from a base order in [0.25, 1.25).

    Orders within ~1e-6 of a non-positive integer lose accuracy (the
    recurrence passes through a cancelling step) except exact integers,
    which are routed through E1 and stay accurate.
    """
    if x < 0.0 or math.isnan(x) or math.isnan(a):
        raise DomainError(f"upper incomplete gamma needs x >= 0, got x={x}")
    if x == 0.0:
        if a <= 0.0:
            raise DomainError("Gamma(a, 0) diverges for a <= 0")
        return float(sp.gammaln(a))
    if a >= 0.25:
        q = sp.gammaincc(a, x)
        if q > 0.0:
            return float(sp.gammaln(a) + math.log(q))
        return _log_gamma_cf(a, x)
    if x >= 1.5 or a <= -2.0:
        return _log_gamma_cf(a, x)
    return _log_gamma_descend(a, x)


def upper_incomplete_gamma(a: float, x: float) -> float:
    """Gamma(a, x) in the linear domain (overflows for huge Gamma values)."""
    return math.exp(log_upper_incomplete_gamma(a, x))


def chi2_scaled_pdf(m: int, xi):
    """Density of the post-beamforming channel gain: Gamma(m, 1).

    f(xi) = xi^(m-1) e^-xi / (m-1)!   for xi >= 0, integer m >= 1.
    Accepts scalar or array xi; returns 0 for negative arguments.
    """
    if m < 1 or int(m) != m:
        raise DomainError(f"gain density needs integer m >= 1, got {m}")
    xi = np.asarray(xi, dtype=float)
    out = np.zeros_like(xi)
    pos = xi > 0
    out[pos] = np.exp((m - 1) * np.log(xi[pos]) - xi[pos] - sp.gammaln(m))
    if m == 1:
        out[xi == 0] = 1.0
    return out if out.ndim else float(out)


def chi2_scaled_sample(m: int, size, rng: np.random.Generator):
    """Draw channel gains with density chi2_scaled_pdf(m, .)."""
    if m < 1 or int(m) != m:
        raise DomainError(f"gain sampling needs integer m >= 1, got {m}")
    return rng.standard_gamma(float(m), size=size)


def signed_logsumexp(logs, signs, axis=None):
    """log |sum_i signs_i * e^(logs_i)| and the sign of that sum.

    scipy's signed logsumexp (b=..., return_sign=True) returns NaN when
    exactly cancelling terms tie at the stack maximum (observed on 1.15),
    so the reduction is done manually: shift by the max, sum in the linear
    domain, take the log back.  All-(-inf) columns reduce to (-inf, 0).
    """
    logs = np.asarray(logs, dtype=float)
    signs = np.asarray(signs, dtype=float)
    m = np.max(logs, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(signs * np.exp(logs - m), axis=axis)
    shift = np.squeeze(m, axis=axis) if axis is not None else np.squeeze(m)
    with np.errstate(divide="ignore"):
        total = np.log(np.abs(s)) + shift
    sign = np.sign(s)
    if np.ndim(total) == 0:
        return float(total), float(sign)
    return total, sign
