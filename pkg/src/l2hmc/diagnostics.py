"""Autocorrelation, effective sample size, mode occupancy and property checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRUNCATION = 0.05


@dataclass
class AutocorrSeries:
    values: np.ndarray  # rho_0 .. rho_K, all >= TRUNCATION except possibly rho_0
    truncation_index: int  # first lag with rho < TRUNCATION (or len(trace))
    sample_moments: bool = False


@dataclass
class EssReport:
    ess_per_step: float
    ess_per_grad: float
    n_grad_evals: int


def _lag_products(centered: np.ndarray) -> np.ndarray:
    """sum_tau (x_tau)^T (x_{tau+t}) for every lag t, via FFT."""
    T = centered.shape[0]
    size = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(centered, n=size, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=0)[:T]
    return acov.sum(axis=1)


def autocorrelation(positions, mu=None, trace_sigma: float | None = None) -> AutocorrSeries:
    """rho_t = sum_tau (x_tau - mu)^T (x_{tau+t} - mu) / (Trace(Sigma) (T - t)).

    Stops at the first lag whose value drops below 0.05.  Without known
    moments the sample mean and variance are used and the result is flagged.
    """
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0]
    if T == 0:
        raise ValueError("empty trace")
    sample = mu is None or trace_sigma is None
    if mu is None:
        mu = x.mean(axis=0)
    if trace_sigma is None:
        trace_sigma = float(np.sum(x.var(axis=0)))
    centered = x - np.asarray(mu, dtype=float)
    sums = _lag_products(centered)
    rho = sums / (trace_sigma * (T - np.arange(T)))
    below = np.flatnonzero(rho[1:] < TRUNCATION)
    k = int(below[0]) + 1 if below.size else T
    return AutocorrSeries(rho[:k].copy(), k, sample)


def pooled_autocorrelation(chains, mu, trace_sigma: float) -> AutocorrSeries:
    """Autocorrelation with lag sums pooled over equal-length chains.

    A chain that barely moves but sits near ``mu`` looks decorrelated on its
    own; pooling averages that luck away.
    """
    chains = [np.asarray(c, dtype=float).reshape(len(c), -1) for c in chains]
    T = min(len(c) for c in chains)
    if T == 0:
        raise ValueError("empty trace")
    sums = sum(_lag_products(c[:T] - np.asarray(mu, dtype=float)) for c in chains)
    rho = sums / (len(chains) * trace_sigma * (T - np.arange(T)))
    below = np.flatnonzero(rho[1:] < TRUNCATION)
    k = int(below[0]) + 1 if below.size else T
    return AutocorrSeries(rho[:k].copy(), k, False)


def ess(series: AutocorrSeries, M: int | None = None, n_steps: int | None = None) -> EssReport:
    """1 / (1 + 2 sum_{t>=1} rho_t) over the truncated series.

    The per-gradient figure assumes 2 gradient evaluations per leapfrog step.
    """
    value = 1.0 / (1.0 + 2.0 * float(np.sum(series.values[1:])))
    if M is None:
        return EssReport(value, value, 0)
    grads_per_step = 2 * M
    n_grads = grads_per_step * (n_steps or 0)
    return EssReport(value, value / grads_per_step, n_grads)


def chain_ess(positions, mu=None, trace_sigma=None) -> float:
    return ess(autocorrelation(positions, mu, trace_sigma)).ess_per_step


def coordinate_ess(chains, mu, cov) -> np.ndarray:
    """Pooled ESS of each coordinate separately, using that coordinate's variance."""
    chains = [np.asarray(c, dtype=float) for c in chains]
    n = chains[0].shape[1]
    return np.array([ess(pooled_autocorrelation([c[:, i] for c in chains], np.asarray(mu)[i:i + 1],
                                                float(np.asarray(cov)[i, i]))).ess_per_step
                     for i in range(n)])


@dataclass
class MultiChainEss:
    per_chain: list[float]
    mean: float
    min: float
    max: float
    pooled: float
    autocorr: list[float] = field(default_factory=list)
    truncation_index: int = 0
    sample_moments: bool = False


def multi_chain_ess(traces_positions, mu=None, cov=None) -> MultiChainEss:
    trace_sigma = None if cov is None else float(np.trace(cov))
    series = [autocorrelation(p, mu, trace_sigma) for p in traces_positions]
    vals = [ess(s).ess_per_step for s in series]
    if trace_sigma is None:
        pooled = float("nan")
        pooled_series = series[0]
    else:
        pooled_series = pooled_autocorrelation(traces_positions, mu, trace_sigma)
        pooled = ess(pooled_series).ess_per_step
    return MultiChainEss(vals, float(np.mean(vals)), float(np.min(vals)), float(np.max(vals)),
                         pooled, pooled_series.values.tolist(), pooled_series.truncation_index,
                         series[0].sample_moments)


def mode_occupancy(positions, centroids) -> np.ndarray:
    """Fraction of samples whose nearest centroid is each centroid."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    c = np.atleast_2d(np.asarray(centroids, dtype=float))
    if len(c) == 0:
        raise ValueError("need at least one centroid")
    dist = np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=-1)
    nearest = np.argmin(dist, axis=1)
    return np.bincount(nearest, minlength=len(c)) / len(x)
