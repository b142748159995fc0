"""Expectation-maximization for the scalar event-driven LDS.

The M-step is exact under the declared box constraints: (a, b) solve a
bounded least-squares problem on the expected sufficient statistics, c is a
clipped scalar ratio, and the variances are closed form. Each iteration
therefore cannot decrease the marginal likelihood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.optimize import lsq_linear

from ..dynamics import LDSParams, TrustParams
from .kalman import GaussianBelief, NumericalFailure, kalman_smooth


@dataclass(frozen=True)
class EMConfig:
    max_iters: int = 1000
    tol: float = 1e-6
    enforce_bounds: bool = True
    fix_c: Optional[float] = None
    fit_prior: bool = True
    var_floor: float = 1e-10
    monotone_tol: float = 1e-8
    tol_per_observation: bool = False  # compare the improvement divided by the observation count


@dataclass
class EMReport:
    params: LDSParams
    prior: GaussianBelief
    loglik: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    unidentified: list = field(default_factory=list)

    @property
    def final_loglik(self) -> float:
        return self.loglik[-1]


def _prep(logs, n_events):
    seqs = []
    for events, obs in logs:
        ev = np.asarray([int(e) for e in events], dtype=np.int64)
        if len(ev) != len(obs):
            raise ValueError("each sequence needs one observation slot per event")
        y = np.array([np.nan if o is None else float(o) for o in obs], dtype=float)
        if len(ev) and (ev.min() < 1 or ev.max() > n_events):
            raise ValueError(f"event index out of range 1..{n_events}")
        seqs.append((ev, y))
    return seqs


def _initial_guess(seqs, model_cls, config):
    """Moment-style start: proxy states y/c, lag-1 regression with per-event offsets."""
    n_ev = model_cls.n_events
    lo, hi = model_cls.bounds()
    all_y = np.concatenate([y for _, y in seqs])
    all_y = all_y[~np.isnan(all_y)]
    if config.fix_c is not None:
        c0 = config.fix_c
    elif model_cls is TrustParams:
        c0 = 1.0
    else:
        c0 = float(np.clip(np.max(np.abs(all_y)) / 10.0, lo[-1] + 1e-6, hi[-1])) if all_y.size else 1.0
    rows, target = [], []
    firsts = []
    for ev, y in seqs:
        z = y / c0
        obs = np.flatnonzero(~np.isnan(z))
        if obs.size:
            firsts.append(z[obs[0]])
        for k in range(1, len(ev)):
            if not (np.isnan(z[k]) or np.isnan(z[k - 1])):
                phi = np.zeros(1 + n_ev)
                phi[0] = z[k - 1]
                phi[ev[k]] = 1.0
                rows.append(phi)
                target.append(z[k])
    seen = np.zeros(n_ev, dtype=bool)
    for ev, _ in seqs:
        seen[ev - 1] = True
    theta = np.r_[0.5 * (lo[0] + hi[0]), np.clip(np.zeros(n_ev), lo[1:-1], hi[1:-1])]
    resid_var = float(np.var(all_y / c0)) if all_y.size else 1.0
    if rows:
        X = np.array(rows)
        t = np.array(target)
        cols = np.r_[True, np.array([X[:, 1 + e].any() for e in range(n_ev)])]
        sol = lsq_linear(X[:, cols], t, bounds=(lo[:-1][cols], hi[:-1][cols]), method="bvls")
        theta[cols] = sol.x
        resid_var = float(np.mean((t - X @ theta) ** 2))
    var0 = max(0.5 * resid_var, config.var_floor)
    params = model_cls(a=theta[0], b=theta[1:], c=c0, q_process=var0, r_measure=max(var0 * c0 * c0, config.var_floor))
    m0 = float(np.mean(firsts)) if firsts else 0.0
    p0 = max(float(np.var(firsts)) if len(firsts) > 1 else 1.0, 1e-2)
    return params, GaussianBelief(m0, p0), [i + 1 for i in range(n_ev) if not seen[i]]


def _e_step(params, prior, seqs):
    outs = []
    ll = 0.0
    for ev, y in seqs:
        obs = [None if np.isnan(v) else v for v in y]
        sm = kalman_smooth(params, ev, obs, prior)
        outs.append(sm)
        ll += sm.loglik
    return outs, ll


def _m_step(params, prior, seqs, smooths, model_cls, config, seen):
    n_ev = model_cls.n_events
    lo, hi = model_cls.bounds()
    dim = 1 + n_ev
    H = np.zeros((dim, dim))
    g = np.zeros(dim)
    sxx = 0.0  # sum E[x_k^2] over transitions
    n_trans = 0
    syx = 0.0
    sxx_obs = 0.0
    syy = 0.0
    n_obs = 0
    init_means, init_vars = [], []
    for (ev, y), sm in zip(seqs, smooths):
        m = np.r_[sm.initial.mean, sm.mean]
        v = np.r_[sm.initial.variance, sm.var]
        ex2 = m * m + v
        exx1 = m[1:] * m[:-1] + sm.lag1
        H[0, 0] += ex2[:-1].sum()
        g[0] += exx1.sum()
        for e in range(1, n_ev + 1):
            sel = ev == e
            if sel.any():
                H[0, e] += m[:-1][sel].sum()
                H[e, e] += sel.sum()
                g[e] += m[1:][sel].sum()
        sxx += ex2[1:].sum()
        n_trans += len(ev)
        obs = ~np.isnan(y)
        yo = y[obs]
        syx += float(yo @ m[1:][obs])
        sxx_obs += ex2[1:][obs].sum()
        syy += float(yo @ yo)
        n_obs += int(obs.sum())
        init_means.append(sm.initial.mean)
        init_vars.append(sm.initial.variance)
    H[:, 0] = H[0, :]

    theta = np.r_[params.a, params.b]
    free = np.r_[True, seen]
    Hf = H[np.ix_(free, free)]
    gf = g[free] - H[np.ix_(free, ~free)] @ theta[~free]
    if config.enforce_bounds:
        L, _ = cho_factor(Hf, lower=True)
        L = np.tril(L)
        rhs = solve_triangular(L, gf, lower=True)
        sol = lsq_linear(L.T, rhs, bounds=(lo[:-1][free], hi[:-1][free]), method="bvls", tol=1e-14)
        theta[free] = sol.x
    else:
        theta[free] = np.linalg.solve(Hf, gf)
    # E[sum (x_k - theta' phi_k)^2] = sum E[x_k^2] - 2 theta'g + theta'H theta
    q = (sxx - 2.0 * theta @ g + theta @ H @ theta) / max(n_trans, 1)
    q = max(q, config.var_floor)

    if config.fix_c is not None:
        c = config.fix_c
    else:
        c = syx / sxx_obs if sxx_obs > 0 else params.c
        if config.enforce_bounds:
            c = float(np.clip(c, lo[-1], hi[-1]))
    r = (syy - 2.0 * c * syx + c * c * sxx_obs) / n_obs if n_obs else params.r_measure
    r = max(r, config.var_floor)

    new_params = model_cls(a=theta[0], b=theta[1:], c=c, q_process=q, r_measure=r)
    if config.fit_prior:
        mu = float(np.mean(init_means))
        var = float(np.mean(np.asarray(init_vars) + (np.asarray(init_means) - mu) ** 2))
        prior = GaussianBelief(mu, max(var, config.var_floor))
    return new_params, prior


def em_fit_lds(logs: Sequence, model_cls=TrustParams, config: EMConfig = EMConfig(),
               init: Optional[tuple] = None) -> EMReport:
    """Fit ``model_cls`` parameters to ``[(events, observations), ...]`` by EM.

    ``observations`` entries may be ``None`` (missing). ``init`` optionally
    supplies ``(params, prior)`` to start from instead of the moment guess.
    """
    if not logs:
        raise ValueError("no sequences to fit")
    seqs = _prep(logs, model_cls.n_events)
    if max(len(ev) for ev, _ in seqs) < 3:
        raise ValueError("need at least one sequence of length >= 3")
    seqs = [s for s in seqs if len(s[0])]

    params, prior, unseen = _initial_guess(seqs, model_cls, config)
    if init is not None:
        params, prior = init
    seen = np.ones(model_cls.n_events, dtype=bool)
    for e in unseen:
        seen[e - 1] = False

    n_obs = sum(int(np.sum(~np.isnan(y))) for _, y in seqs)
    tol = config.tol * max(n_obs, 1) if config.tol_per_observation else config.tol
    report = EMReport(params=params, prior=prior, unidentified=list(unseen))
    smooths, ll = _e_step(params, prior, seqs)
    report.loglik.append(ll)
    for it in range(1, config.max_iters + 1):
        params, prior = _m_step(params, prior, seqs, smooths, model_cls, config, seen)
        smooths, ll_new = _e_step(params, prior, seqs)
        report.loglik.append(ll_new)
        report.n_iter = it
        report.params, report.prior = params, prior
        slack = config.monotone_tol + 1e-12 * abs(ll)
        if ll_new < ll - slack:
            raise NumericalFailure(f"EM log-likelihood decreased at iteration {it}: {ll} -> {ll_new}")
        if not math.isfinite(ll_new):
            raise NumericalFailure("EM log-likelihood is not finite")
        if ll_new - ll < tol:
            report.converged = True
            break
        ll = ll_new
    return report
