"""Monte-Carlo channel layer: estimates, beamformers, SINR and error draws.

Channels are i.i.d. circularly-symmetric complex Gaussian.  The
transmitter zero-forces on the *estimated* channels; estimation error
re-enters as signal-power perturbation and residual interference when
the true channel is revealed.  All draws run off explicit numpy
Generators so every experiment is replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DerivedBudget
from .errors import DomainError, RejectionBudgetExhausted, SingularEstimate
from .numerics import gaussian_tail
from .outage import dispersion_iid

__all__ = [
    "ChannelEstimate",
    "SinrSample",
    "sample_estimate",
    "sample_sinr",
    "sample_sinr_batch",
    "conditioned_estimate",
    "empirical_outage",
    "empirical_fbl_error",
]

_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    """One estimated downlink and its zero-forcing beamformers.

    ``h_hat`` stacks the estimated per-user channels as columns
    (n_antennas x k); ``beamformers`` are the unit-norm ZF columns;
    ``mu`` is the tagged user's (index 0) signal-power scale
    p_per_user * |h_hat_0^H v_0|^2.
    """

    h_hat: np.ndarray
    beamformers: np.ndarray
    mu: float


@dataclass(frozen=True, eq=False)
class SinrSample:
    sinr: object
    sig_power: object
    interference: object


def _draw_h(n_antennas: int, k: int, entry_var: float, rng: np.random.Generator, size=()):
    shape = size + (n_antennas, k)
    scale = math.sqrt(entry_var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _zf_from_h(h_hat: np.ndarray, p_per_user: float) -> ChannelEstimate:
    gram = h_hat.conj().T @ h_hat
    pinv = np.linalg.solve(gram, h_hat.conj().T)  # (k, n_antennas) = H^+
    w = pinv.conj().T  # columns w_j with h_hat_i^H w_j = delta_ij
    norms = np.linalg.norm(w, axis=0)
    v = w / norms
    mu = p_per_user / float(norms[0]) ** 2
    return ChannelEstimate(h_hat=h_hat, beamformers=v, mu=mu)


def sample_estimate(
    budget: DerivedBudget,
    n_antennas: int,
    rng: np.random.Generator,
    *,
    shrink_estimate: bool = True,
    max_retries: int = 64,
) -> ChannelEstimate:
    """Draw one channel estimate and its ZF beamformers.

    Estimated entries carry variance 1 - sigma_e_sq (the estimator removes
    the error power) unless ``shrink_estimate`` is disabled.  Nearly
    singular draws (condition number beyond 1e12) are redrawn; persistent
    failure raises SingularEstimate.
    """
    if budget.k_sched > n_antennas:
        raise DomainError("more users than antennas cannot be zero-forced")
    entry_var = (1.0 - budget.sigma_e_sq) if shrink_estimate else 1.0
    for _ in range(max_retries):
        h_hat = _draw_h(n_antennas, budget.k_sched, entry_var, rng)
        if np.linalg.cond(h_hat) <= _COND_LIMIT:
            return _zf_from_h(h_hat, budget.p_per_user)
    raise SingularEstimate(f"no well-conditioned estimate in {max_retries} draws")


def sample_sinr(budget: DerivedBudget, estimate: ChannelEstimate, rng: np.random.Generator) -> SinrSample:
    """Reveal one true channel for the tagged user and score its SINR."""
    s = sample_sinr_batch(budget, estimate, 1, rng)
    return SinrSample(float(s.sinr[0]), float(s.sig_power[0]), float(s.interference[0]))


def sample_sinr_batch(
    budget: DerivedBudget, estimate: ChannelEstimate, n_draws: int, rng: np.random.Generator
) -> SinrSample:
    """Vectorized SINR draws for a fixed estimate.

    The tagged user's true channel is h_hat_0 + e with e ~ CN(0, sigma_e^2 I);
    the estimate's own beam contributes the (real) matched term while every
    other beam only sees the estimation error.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    n_antennas, k = estimate.h_hat.shape
    rho = budget.p_per_user
    sig_amp = float(np.real(estimate.h_hat[:, 0].conj() @ estimate.beamformers[:, 0]))
    if budget.sigma_e_sq == 0.0:
        sig = np.full(n_draws, rho * sig_amp**2)
        zero = np.zeros(n_draws)
        return SinrSample(sinr=sig.copy(), sig_power=sig, interference=zero)
    err = _draw_h(n_antennas, 1, budget.sigma_e_sq, rng, size=(n_draws,))[..., 0]
    proj = err.conj() @ estimate.beamformers  # (n_draws, k)
    sig = rho * np.abs(sig_amp + proj[:, 0]) ** 2
    interference = rho * np.sum(np.abs(proj[:, 1:]) ** 2, axis=1) if k > 1 else np.zeros(n_draws)
    return SinrSample(sinr=sig / (1.0 + interference), sig_power=sig, interference=interference)


def conditioned_estimate(
    budget: DerivedBudget,
    n_antennas: int,
    target_capacity_bits: float,
    tol_bits: float,
    rng: np.random.Generator,
    *,
    shrink_estimate: bool = True,
    max_draws: int = 10_000_000,
    batch: int = 512,
) -> ChannelEstimate:
    """Rejection-sample an estimate whose nominal capacity hits a window.

    Accepts the first draw with log2(1 + mu) within
    [target - tol, target + tol]; raises RejectionBudgetExhausted after
    ``max_draws`` rejected draws (a zero-width window always exhausts).
    """
    if budget.k_sched > n_antennas:
        raise DomainError("more users than antennas cannot be zero-forced")
    lo = np.exp2(target_capacity_bits - tol_bits) - 1.0
    hi = np.exp2(target_capacity_bits + tol_bits) - 1.0
    entry_var = (1.0 - budget.sigma_e_sq) if shrink_estimate else 1.0
    rho = budget.p_per_user
    drawn = 0
    while drawn < max_draws:
        nb = min(batch, max_draws - drawn)
        h = _draw_h(n_antennas, budget.k_sched, entry_var, rng, size=(nb,))
        gram = np.einsum("bij,bik->bjk", h.conj(), h)
        rhs = np.zeros((nb, budget.k_sched, 1), dtype=gram.dtype)
        rhs[:, 0, 0] = 1.0
        try:
            inv_col = np.linalg.solve(gram, rhs)[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularEstimate("singular batch during conditioning") from exc
        mus = rho / np.real(inv_col[:, 0])  # [G^-1]_00 = |w_0|^2
        drawn += nb
        hits = np.nonzero((mus >= lo) & (mus <= hi))[0]
        if hits.size:
            return _zf_from_h(h[hits[0]], rho)
    raise RejectionBudgetExhausted(
        f"no estimate hit capacity window {target_capacity_bits}+-{tol_bits} "
        f"bits within {max_draws} draws"
    )


def _sinr_batches(budget, estimate, n_draws, rng, batch):
    done = 0
    while done < n_draws:
        nb = min(batch, n_draws - done)
        yield sample_sinr_batch(budget, estimate, nb, rng).sinr
        done += nb


def empirical_outage(
    budget: DerivedBudget,
    estimate: ChannelEstimate,
    rates,
    n_draws: int,
    rng: np.random.Generator,
    *,
    batch: int = 200_000,
):
    """Monte-Carlo outage curve for a fixed estimate.

    Returns (p_hat, stderr) arrays over ``rates``: the fraction of revealed
    channels whose instantaneous capacity falls below each rate.
    """
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    thresholds = np.exp2(rates) - 1.0
    counts = np.zeros(rates.shape, dtype=np.int64)
    for sinr in _sinr_batches(budget, estimate, n_draws, rng, batch):
        sinr_sorted = np.sort(sinr)
        counts += np.searchsorted(sinr_sorted, thresholds, side="left")
    p = counts / n_draws
    stderr = np.sqrt(p * (1.0 - p) / n_draws)
    return p, stderr


def empirical_fbl_error(
    budget: DerivedBudget,
    estimate: ChannelEstimate,
    rates,
    n_draws: int,
    n_data: int,
    rng: np.random.Generator,
    *,
    batch: int = 100_000,
):
    """Monte-Carlo mean block-error curve at finite blocklength.

    Averages the normal-approximation error probability of each revealed
    SINR; as n_data grows this collapses onto the outage indicator.
    """
    rates = np.atleast_1d(np.asarray(rates, dtype=float))
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    if n_data <= 0:
        raise DomainError("blocklength must be positive")
    acc = np.zeros(rates.shape)
    acc_sq = np.zeros(rates.shape)
    for sinr in _sinr_batches(budget, estimate, n_draws, rng, batch):
        cap = np.log2(1.0 + sinr)
        scale = np.sqrt(dispersion_iid(sinr) / n_data)
        with np.errstate(divide="ignore", invalid="ignore"):
            arg = (cap[:, None] - rates[None, :]) / scale[:, None]
        arg = np.where(scale[:, None] == 0.0, np.where(cap[:, None] >= rates[None, :], np.inf, -np.inf), arg)
        eps = gaussian_tail(arg)
        acc += eps.sum(axis=0)
        acc_sq += (eps**2).sum(axis=0)
    mean = acc / n_draws
    var = np.maximum(acc_sq / n_draws - mean**2, 0.0)
    stderr = np.sqrt(var / n_draws)
    return mean, stderr
