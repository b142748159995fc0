"""Monte-Carlo maximum likelihood for the sigmoid reliance model.

Latent trust and engagement are never observed directly, so the Bernoulli
log-likelihood of each recorded human action is averaged over joint draws
from the LDS smoothing posteriors (trust reports and tracking scores as
observations) and the averaged objective is maximized per complexity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from ..domain import CollectionComplexity, HumanAction, RobotAction, engagement_events
from ..dynamics import ActionModelParams, EngagementParams, SigmoidCoefficients, TrustParams
from .kalman import GaussianBelief, sample_posterior


class UnidentifiableError(ValueError):
    def __init__(self, what: str):
        super().__init__(f"unidentifiable: {what}")
        self.what = what


@dataclass(frozen=True)
class ActionFitConfig:
    mc_samples: int = 50
    restarts: int = 10
    max_iters: int = 500
    gtol: float = 1e-6
    coef_cap: float = 20.0
    seed: int = 0


@dataclass
class ActionFitResult:
    params: ActionModelParams
    separated: dict = field(default_factory=dict)
    loglik: dict = field(default_factory=dict)
    n_trials: dict = field(default_factory=dict)
    grad_norm: dict = field(default_factory=dict)


@dataclass
class ActionData:
    """Latent draws and responses for every autonomous attempt of one complexity."""

    trust: np.ndarray  # (S, n)
    engagement: np.ndarray  # (S, n)
    relied: np.ndarray  # (n,) float 0/1


def _log_sig(x):
    return -np.logaddexp(0.0, -x)


def mc_log_likelihood(coef, data: ActionData):
    """Average over draws of the summed Bernoulli log-likelihood, and its gradient."""
    a_t, a_g, b = coef
    z = a_t * data.trust + a_g * data.engagement + b
    y = data.relied
    ll = (y * _log_sig(z) + (1.0 - y) * _log_sig(-z)).sum(axis=1).mean()
    resid = y - 1.0 / (1.0 + np.exp(-z))
    S = z.shape[0]
    grad = np.array([(resid * data.trust).sum(), (resid * data.engagement).sum(), resid.sum()]) / S
    return float(ll), grad


def posterior_draws(participants: Mapping[str, Sequence], trust: TrustParams, engagement: EngagementParams,
                    trust_prior: GaussianBelief, engagement_prior: GaussianBelief,
                    n_samples: int, rng: np.random.Generator) -> dict:
    """Collect ``ActionData`` per complexity from joint smoothing draws.

    The action in trial t depends on the state before it, i.e. draw column t-1.
    """
    cols = {c: ([], [], []) for c in CollectionComplexity}
    for pid in sorted(participants):
        recs = participants[pid]
        t_events = [r.trust_event for r in recs]
        g_events = engagement_events(recs)
        xt = sample_posterior(trust, t_events, [r.trust_report for r in recs], trust_prior, n_samples, rng)
        xg = sample_posterior(engagement, g_events, [r.tracking_score for r in recs], engagement_prior, n_samples, rng)
        for k, rec in enumerate(recs):
            if rec.robot_action is RobotAction.ATTEMPT_AUTONOMOUS:
                t_list, g_list, y_list = cols[rec.c1]
                t_list.append(xt[:, k])
                g_list.append(xg[:, k])
                y_list.append(1.0 if rec.human_action is HumanAction.RELY else 0.0)
    out = {}
    for c, (t_list, g_list, y_list) in cols.items():
        if y_list:
            out[c] = ActionData(np.column_stack(t_list), np.column_stack(g_list), np.array(y_list))
    return out


def maximize(data: ActionData, config: ActionFitConfig, rng: np.random.Generator):
    cap = config.coef_cap
    bounds = [(-cap, cap)] * 3

    def neg(x):
        ll, g = mc_log_likelihood(x, data)
        return -ll, -g

    best = None
    starts = [np.zeros(3)] + [rng.normal(0.0, 1.0, size=3) for _ in range(config.restarts - 1)]
    for x0 in starts:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": config.max_iters, "gtol": config.gtol, "ftol": 1e-15})
        if best is None or res.fun < best.fun:
            best = res
    x = best.x
    _, g = mc_log_likelihood(x, data)
    at_cap = np.abs(x) >= cap - 1e-6
    # gradient components pushing outward at an active bound do not count
    proj = np.where(at_cap & (np.sign(g) == np.sign(x)), 0.0, g)
    return x, -float(best.fun), bool(at_cap.any()), float(np.linalg.norm(proj))


def fit_action_model(participants: Mapping[str, Sequence], trust: TrustParams, engagement: EngagementParams,
                     trust_prior: GaussianBelief, engagement_prior: GaussianBelief,
                     config: ActionFitConfig = ActionFitConfig()) -> ActionFitResult:
    rng = np.random.default_rng(config.seed)
    data = posterior_draws(participants, trust, engagement, trust_prior, engagement_prior, config.mc_samples, rng)
    result = ActionFitResult(params=None)
    rows = {}
    for c in CollectionComplexity:
        if c not in data:
            raise UnidentifiableError(f"no autonomous attempts with {c.name} collection complexity")
        x, ll, sep, gn = maximize(data[c], config, rng)
        rows[c] = SigmoidCoefficients(*map(float, x))
        result.separated[c.code] = sep
        result.loglik[c.code] = ll
        result.n_trials[c.code] = len(data[c].relied)
        result.grad_norm[c.code] = gn
    result.params = ActionModelParams(low=rows[CollectionComplexity.LOW], high=rows[CollectionComplexity.HIGH])
    return result
