"""Exact inference for the scalar trust / engagement LDS.

Indexing: ``x_0`` is the state before the first trial; trial ``k`` (1-based)
applies event ``u_k`` and yields ``x_k``, which its observation measures:

    x_k = a x_{k-1} + b[u_k] + v_k,    y_k = c x_k + w_k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import kernels
from ..dynamics import LDSParams


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianBelief:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance >= 0.0:
            raise NumericalFailure(f"negative or NaN variance {self.variance}")


@dataclass(frozen=True)
class FilterResult:
    pred_mean: np.ndarray
    pred_var: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    loglik: float

    def beliefs(self) -> list:
        return [GaussianBelief(float(m), float(v)) for m, v in zip(self.mean, self.var)]


@dataclass(frozen=True)
class SmootherOutput:
    """Smoothed moments for x_1..x_n plus the initial state x_0.

    ``lag1[k]`` holds Cov(x_{k+1}, x_k | y_{1:n}) with ``lag1[0]`` pairing
    x_1 with x_0.
    """

    mean: np.ndarray
    var: np.ndarray
    lag1: np.ndarray
    initial: GaussianBelief
    filtered: FilterResult

    def __len__(self):
        return len(self.mean)

    @property
    def loglik(self) -> float:
        return self.filtered.loglik


def _drive(params: LDSParams, inputs) -> np.ndarray:
    idx = np.asarray([int(e) for e in inputs], dtype=np.int64)
    if idx.size and (idx.min() < 1 or idx.max() > params.n_events):
        raise ValueError(f"event index out of range 1..{params.n_events}")
    return params.b[idx - 1] if idx.size else np.zeros(0)


def _observations(observations) -> tuple:
    y = np.array([np.nan if o is None else float(o) for o in observations], dtype=float)
    return np.nan_to_num(y), ~np.isnan(y)


def run_filter(params: LDSParams, inputs, observations, prior: GaussianBelief) -> FilterResult:
    if len(inputs) != len(observations):
        raise ValueError("inputs and observations must have equal length")
    y, mask = _observations(observations)
    out = kernels.kalman_filter_kernel(
        params.a, _drive(params, inputs), params.c, params.q_process, params.r_measure,
        float(prior.mean), float(prior.variance), y, mask,
    )
    res = FilterResult(*out[:4], float(out[4]))
    if math.isnan(res.loglik) or np.any(res.var < 0):
        raise NumericalFailure("innovation variance became negative")
    return res


def kalman_filter(params: LDSParams, inputs: Sequence, observations: Sequence[Optional[float]],
                  prior: GaussianBelief) -> list:
    """Filtered posteriors p(x_k | y_{1:k}) for k = 1..n."""
    return run_filter(params, inputs, observations, prior).beliefs()


def kalman_smooth(params: LDSParams, inputs: Sequence, observations: Sequence[Optional[float]],
                  prior: GaussianBelief) -> SmootherOutput:
    filt = run_filter(params, inputs, observations, prior)
    if len(inputs) == 0:
        raise ValueError("cannot smooth an empty sequence")
    ms, ps, lag1 = kernels.rts_smoother_kernel(
        params.a, float(prior.mean), float(prior.variance), filt.pred_mean, filt.pred_var, filt.mean, filt.var
    )
    return SmootherOutput(
        mean=ms[1:], var=ps[1:], lag1=lag1,
        initial=GaussianBelief(float(ms[0]), float(ps[0])), filtered=filt,
    )


def log_likelihood(params: LDSParams, inputs, observations, prior: GaussianBelief) -> float:
    return run_filter(params, inputs, observations, prior).loglik


def sample_posterior(params: LDSParams, inputs, observations, prior: GaussianBelief,
                     n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Joint draws of x_0..x_n from the smoothing posterior (forward filter, backward sample).

    Returns an ``(n_samples, n + 1)`` array; column 0 is the initial state.
    """
    filt = run_filter(params, inputs, observations, prior)
    n = len(inputs)
    a = params.a
    mf = np.r_[prior.mean, filt.mean]
    pf = np.r_[prior.variance, filt.var]
    z = rng.standard_normal((n_samples, n + 1))
    x = np.empty((n_samples, n + 1))
    x[:, n] = mf[n] + math.sqrt(pf[n]) * z[:, n]
    for k in range(n - 1, -1, -1):
        pp = filt.pred_var[k]
        if pp > 0.0:
            J = pf[k] * a / pp
            cond_var = max(pf[k] - J * pf[k] * a, 0.0)
            cond_mean = mf[k] + J * (x[:, k + 1] - filt.pred_mean[k])
        else:
            cond_var = pf[k]
            cond_mean = np.full(n_samples, mf[k])
        x[:, k] = cond_mean + math.sqrt(cond_var) * z[:, k]
    return x
