"""Bootstrap particle filter over (trust, engagement).

Per trial: weight by the reliance likelihood of the observed human action
at the pre-trial state, propagate both states through their dynamics with
sampled process noise, then weight by the tracking score and (optionally)
the trust report measured at the post-trial state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels
from ..domain import CollectionComplexity, EngagementEvent, HumanAction, TrustEvent
from ..dynamics import LatentState, ModelParams


class DegeneracyError(RuntimeError):
    pass


@dataclass(frozen=True)
class PFConfig:
    n_particles: int = 2000
    trust_mean: float = 7.0
    trust_sd: float = 1.0
    engagement_mean: float = 7.0
    engagement_sd: float = 1.0
    resample_fraction: float = 0.5


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    particles: np.ndarray  # (N, 2): trust, engagement
    weights: np.ndarray

    def __post_init__(self):
        if self.particles.shape != (len(self.weights), 2):
            raise ValueError("particles must be (N, 2) with one weight each")
        for arr in (self.particles, self.weights):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.weights)

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


@dataclass(frozen=True)
class PFObservation:
    c1: CollectionComplexity
    human_action: Optional[HumanAction] = None
    tracking_score: Optional[float] = None
    trust_report: Optional[float] = None


def pf_init(config: PFConfig, rng: np.random.Generator) -> ParticleBelief:
    n = config.n_particles
    z = rng.standard_normal((n, 2))
    parts = np.column_stack((config.trust_mean + config.trust_sd * z[:, 0],
                             config.engagement_mean + config.engagement_sd * z[:, 1]))
    return ParticleBelief(parts, np.full(n, 1.0 / n))


def pf_step(belief: ParticleBelief, model: ModelParams, trust_event: TrustEvent,
            engagement_event: EngagementEvent, obs: PFObservation, rng: np.random.Generator,
            resample_fraction: float = 0.5) -> ParticleBelief:
    """One filtering step; draws exactly ``2N + 1`` random numbers regardless of branch."""
    n = len(belief)
    tp, ep = model.trust, model.engagement
    noise_t = math.sqrt(tp.q_process) * rng.standard_normal(n)
    noise_g = math.sqrt(ep.q_process) * rng.standard_normal(n)
    u0 = rng.random()

    if obs.human_action is None:
        act_code = -1
    else:
        act_code = 1 if obs.human_action is HumanAction.RELY else 0
    row = model.action.for_complexity(obs.c1)
    act_row = np.array([row.a_t, row.a_g, row.bias])
    with np.errstate(divide="ignore"):
        logw = np.log(belief.weights)
    parts, lw = kernels.pf_update(
        np.ascontiguousarray(belief.particles), logw, act_code, act_row,
        tp.b[trust_event.column], ep.b[engagement_event.column], tp.a, ep.a, noise_t, noise_g,
        math.nan if obs.tracking_score is None else float(obs.tracking_score), ep.c, ep.r_measure,
        math.nan if obs.trust_report is None else float(obs.trust_report), tp.c, tp.r_measure,
    )
    top = np.max(lw)
    if not math.isfinite(top):
        raise DegeneracyError(
            f"all particle weights vanished (max log-weight {top}); observations {obs} are "
            "incompatible with every particle"
        )
    w = np.exp(lw - top)
    w /= w.sum()
    if 1.0 / np.sum(w ** 2) < resample_fraction * n:
        idx = kernels.systematic_resample(w, u0)
        parts = parts[idx]
        w = np.full(n, 1.0 / n)
    return ParticleBelief(np.ascontiguousarray(parts), w)


def pf_estimate(belief: ParticleBelief) -> LatentState:
    m = belief.weights @ belief.particles
    return LatentState(float(m[0]), float(m[1]))


def pf_variance(belief: ParticleBelief) -> np.ndarray:
    m = belief.weights @ belief.particles
    return belief.weights @ (belief.particles - m) ** 2
