"""Expected rewards, certainty-equivalent dynamics and the MPC assistance policy."""
from __future__ import annotations

import enum
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import ndtr

from . import kernels
from .domain import (
    TRACKING_THRESHOLD,
    CollectionComplexity,
    ContractError,
    EnvironmentParams,
    Outcome,
    RobotAction,
    TrackingComplexity,
)
from .dynamics import ActionModelParams, EngagementParams, ModelParams, TrustParams, reliance_probability

LOW, HIGH = CollectionComplexity.LOW, CollectionComplexity.HIGH
AUTO, ASK = RobotAction.ATTEMPT_AUTONOMOUS, RobotAction.SEEK_ASSISTANCE


class TrackingRewardMode(enum.Enum):
    HARD_THRESHOLD = "hard"
    GAUSSIAN_SMOOTHED = "smooth"


@dataclass(frozen=True)
class CEState:
    t_bar: float
    g_bar: float
    epsilon: float = 1.0
    prev_q: float = 1.0

    def __post_init__(self):
        for name in ("epsilon", "prev_q"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class SolverConfig:
    grid_resolution: int = 3
    restarts: int = 8
    grad_tol: float = 1e-7
    max_iters: int = 500
    fd_step: float = 1e-5


@dataclass(frozen=True)
class MPCConfig:
    horizon: int = 5
    env: EnvironmentParams = field(default_factory=EnvironmentParams)
    tracking_reward_mode: TrackingRewardMode = TrackingRewardMode.GAUSSIAN_SMOOTHED
    solver: SolverConfig = field(default_factory=SolverConfig)
    action_threshold: float = 0.5
    stochastic_action: bool = False
    literal_theta: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must be at least 1")
        if self.solver.grid_resolution < 2:
            raise ContractError("grid resolution must be at least 2")
        if not (0.0 <= self.action_threshold <= 1.0):
            raise ContractError("action threshold must lie in [0, 1]")


@dataclass(frozen=True)
class KnownContext:
    """What is known at the start of a trial: both complexities and the last experience."""

    c1: CollectionComplexity
    c2: TrackingComplexity
    prev_experience: Outcome = Outcome.SUCCESS

    def first_step_env(self, env: EnvironmentParams) -> EnvironmentParams:
        return replace(env, beta1=1.0 if self.c1 is HIGH else 0.0,
                       beta2=1.0 if self.c2 is TrackingComplexity.NORMAL else 0.0)

    @property
    def epsilon(self) -> float:
        return 1.0 if self.prev_experience is Outcome.SUCCESS else 0.0


@dataclass(frozen=True)
class ThetaProbs:
    probs: np.ndarray

    def __getitem__(self, i):
        """1-based, matching θ¹..θ⁷."""
        return float(self.probs[i - 1])


@dataclass(frozen=True)
class PhiProbs:
    probs: np.ndarray

    def __getitem__(self, i):
        return float(self.probs[i - 1])


# ------------------------------------------------------- expected rewards

def _auto_collection_value(p_suc: float) -> float:
    return p_suc * 3.0 + (1.0 - p_suc) * -4.0


def expected_collection_reward(t, g, action: RobotAction, env: EnvironmentParams, params: ActionModelParams) -> float:
    if action is ASK:
        return 1.0
    # an interrupted attempt earns 0, so only the relied branch contributes
    low = reliance_probability(params, t, g, LOW) * _auto_collection_value(env.p_suc_low)
    high = reliance_probability(params, t, g, HIGH) * _auto_collection_value(env.p_suc_high)
    return (1.0 - env.beta1) * low + env.beta1 * high


def tracking_smoothing_sd(params: EngagementParams) -> float:
    return math.sqrt(params.r_measure + params.c ** 2 * params.q_process)


def _engagement_drive(ce: CEState, action: RobotAction, env: EnvironmentParams, params: EngagementParams) -> float:
    phi = phi_probabilities(ce, env).probs
    block = slice(4, 8) if action is AUTO else slice(0, 4)
    return float(phi[block] @ params.b[block])


def expected_tracking_reward(ce: CEState, action: RobotAction, env: EnvironmentParams, params: EngagementParams,
                             mode: TrackingRewardMode = TrackingRewardMode.HARD_THRESHOLD) -> float:
    g_next = params.a * ce.g_bar + _engagement_drive(ce, action, env, params)
    p_bar = params.c * g_next
    if mode is TrackingRewardMode.HARD_THRESHOLD:
        hit = 1.0 if p_bar >= TRACKING_THRESHOLD else 0.0
    else:
        hit = float(ndtr((p_bar - TRACKING_THRESHOLD) / tracking_smoothing_sd(params)))
    return (1.0 - env.beta2) * 0.25 * hit + env.beta2 * 0.5 * hit


# ------------------------------------------------------ event probabilities

def theta_probabilities(t, g, env: EnvironmentParams, params: ActionModelParams, literal: bool = False) -> ThetaProbs:
    """θ probabilities, each conditioned on the robot action its event names.

    ``literal=True`` uses the low-complexity success rate in θ⁴/θ⁵, as printed.
    """
    b1 = env.beta1
    pl = reliance_probability(params, t, g, LOW)
    ph = reliance_probability(params, t, g, HIGH)
    ps_l = env.p_suc_low
    ps_h = env.p_suc_low if literal else env.p_suc_high
    probs = np.array([
        (1 - b1) * ps_l * pl,
        (1 - b1) * (1 - ps_l) * pl,
        1 - b1,
        b1 * ps_h * ph,
        b1 * (1 - ps_h) * ph,
        b1,
        (1 - b1) * (1 - pl) + b1 * (1 - ph),
    ])
    return ThetaProbs(probs)


def phi_probabilities(ce: CEState, env: EnvironmentParams, params: Optional[ActionModelParams] = None) -> PhiProbs:
    b2, e = env.beta2, ce.epsilon
    block = np.array([(1 - b2) * e, b2 * e, (1 - b2) * (1 - e), b2 * (1 - e)])
    return PhiProbs(np.r_[block, block])


def epsilon_update(prev_q, t_prev, g_prev, env: EnvironmentParams, params: ActionModelParams) -> float:
    relied_success = ((1 - env.beta1) * env.p_suc_low * reliance_probability(params, t_prev, g_prev, LOW)
                      + env.beta1 * env.p_suc_high * reliance_probability(params, t_prev, g_prev, HIGH))
    return float(prev_q * relied_success + (1 - prev_q))


def ce_input_matrices(ce: CEState, env: EnvironmentParams, trust: TrustParams, engagement: EngagementParams,
                      action: ActionModelParams, literal: bool = False):
    """Row vectors B̂^T and B̂^G, columns ordered (autonomous, assistance)."""
    th = theta_probabilities(ce.t_bar, ce.g_bar, env, action, literal).probs
    auto = np.array([0, 1, 3, 4, 6])
    ask = np.array([2, 5])
    bt = np.array([th[auto] @ trust.b[auto], th[ask] @ trust.b[ask]])
    ph = phi_probabilities(ce, env).probs
    bg = np.array([ph[4:] @ engagement.b[4:], ph[:4] @ engagement.b[:4]])
    return bt, bg


def ce_step(ce: CEState, q: float, env: EnvironmentParams, trust: TrustParams, engagement: EngagementParams,
            action: ActionModelParams, literal: bool = False) -> CEState:
    if not (0.0 <= q <= 1.0):
        raise ContractError(f"q={q} outside [0, 1]")
    bt, bg = ce_input_matrices(ce, env, trust, engagement, action, literal)
    u = np.array([q, 1.0 - q])
    return CEState(
        t_bar=float(trust.a * ce.t_bar + bt @ u),
        g_bar=float(engagement.a * ce.g_bar + bg @ u),
        epsilon=min(max(epsilon_update(q, ce.t_bar, ce.g_bar, env, action), 0.0), 1.0),
        prev_q=q,
    )


def step_reward(ce: CEState, q: float, env: EnvironmentParams, model: ModelParams,
                mode: TrackingRewardMode) -> float:
    coll = q * expected_collection_reward(ce.t_bar, ce.g_bar, AUTO, env, model.action) + (1 - q) * 1.0
    track = (q * expected_tracking_reward(ce, AUTO, env, model.engagement, mode)
             + (1 - q) * expected_tracking_reward(ce, ASK, env, model.engagement, mode))
    return coll + track


# ------------------------------------------------------------------- MPC

def horizon_envs(known: KnownContext, config: MPCConfig) -> list:
    first = known.first_step_env(config.env)
    return [first] + [config.env] * (config.horizon - 1)


def mpc_objective(q_seq, ce: CEState, known: KnownContext, config: MPCConfig, model: ModelParams) -> float:
    """Reference (scalar, unvectorised) evaluation of the receding-horizon objective."""
    envs = horizon_envs(known, config)
    state = replace(ce, epsilon=known.epsilon)
    total = 0.0
    for q, env in zip(q_seq, envs):
        total += step_reward(state, q, env, model, config.tracking_reward_mode)
        state = ce_step(state, q, env, model.trust, model.engagement, model.action, config.literal_theta)
    return total


@dataclass(frozen=True)
class _Packed:
    t0: float
    g0: float
    eps0: float
    beta1: np.ndarray
    beta2: np.ndarray
    trust_ab: np.ndarray
    eng_abc: np.ndarray
    act: np.ndarray
    env: np.ndarray
    mode: int
    track_sd: float
    literal: bool

    def __call__(self, Q):
        return kernels.ce_objective(
            np.ascontiguousarray(Q, dtype=float), self.t0, self.g0, self.eps0, self.beta1, self.beta2,
            self.trust_ab, self.eng_abc, self.act, self.env, self.mode, self.track_sd, self.literal,
        )


def pack_objective(ce: CEState, known: KnownContext, config: MPCConfig, model: ModelParams) -> _Packed:
    envs = horizon_envs(known, config)
    mode = kernels.MODE_SMOOTH if config.tracking_reward_mode is TrackingRewardMode.GAUSSIAN_SMOOTHED else kernels.MODE_HARD
    return _Packed(
        t0=float(ce.t_bar), g0=float(ce.g_bar), eps0=known.epsilon,
        beta1=np.array([e.beta1 for e in envs]), beta2=np.array([e.beta2 for e in envs]),
        trust_ab=np.r_[model.trust.a, model.trust.b],
        eng_abc=np.r_[model.engagement.a, model.engagement.b, model.engagement.c],
        act=model.action.as_array(),
        env=np.array([config.env.p_suc_low, config.env.p_suc_high]),
        mode=mode, track_sd=tracking_smoothing_sd(model.engagement), literal=bool(config.literal_theta),
    )


@dataclass(frozen=True)
class MPCSolution:
    q: np.ndarray
    value: float

    @property
    def q1(self) -> float:
        return float(self.q[0])


def _seeds(f, n: int, solver: SolverConfig) -> list:
    seeds = [np.zeros(n), np.ones(n)]
    n_grid = max(solver.restarts - 2, 0)
    if n_grid:
        levels = np.linspace(0.0, 1.0, solver.grid_resolution)
        grid = np.array(list(itertools.product(levels, repeat=n)))
        vals = f(grid)
        order = np.argsort(-vals, kind="stable")
        for i in order:
            cand = grid[i]
            if any(np.array_equal(cand, s) for s in seeds):
                continue
            seeds.append(cand)
            if len(seeds) >= 2 + n_grid:
                break
    return seeds


def _ascend(f, x, solver: SolverConfig):
    n = len(x)
    h = solver.fd_step
    eye = np.eye(n) * h
    fx = f(x[None, :])[0]
    for _ in range(solver.max_iters):
        vals = f(np.vstack((x + eye, x - eye)))
        grad = (vals[:n] - vals[n:]) / (2 * h)
        if np.linalg.norm(np.clip(x + grad, 0.0, 1.0) - x) < solver.grad_tol:
            break
        step = 1.0
        moved = False
        while step > 1e-10:
            x_new = np.clip(x + step * grad, 0.0, 1.0)
            f_new = f(x_new[None, :])[0]
            if f_new >= fx + 1e-4 * grad @ (x_new - x) and f_new > fx:
                x, fx = x_new, f_new
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return x, fx


def mpc_solve(ce: CEState, known: KnownContext, config: MPCConfig, model: ModelParams) -> MPCSolution:
    """Maximize the horizon-``N`` certainty-equivalent reward over q in [0, 1]^N.

    Multi-start projected gradient ascent with central finite differences and
    step halving, seeded from all-0, all-1 and the best coarse-grid points.
    """
    if config.horizon < 1:
        raise ContractError("horizon must be at least 1")
    f = pack_objective(ce, known, config, model)
    best_x, best_v = None, -np.inf
    for seed in _seeds(f, config.horizon, config.solver):
        x, v = _ascend(f, seed.astype(float), config.solver)
        if v > best_v:
            best_x, best_v = x, v
    return MPCSolution(q=best_x, value=float(best_v))


def mpc_policy_action(q1: float, config: MPCConfig, rng: Optional[np.random.Generator] = None) -> RobotAction:
    if not (0.0 <= q1 <= 1.0):
        raise ContractError(f"q1={q1} outside [0, 1]")
    if config.stochastic_action:
        if rng is None:
            raise ContractError("stochastic action selection needs an rng")
        return AUTO if rng.random() < q1 else ASK
    return AUTO if q1 >= config.action_threshold else ASK


def greedy_action(c1: CollectionComplexity = None, c2: TrackingComplexity = None) -> RobotAction:
    return AUTO


RANDOM_ASSIST_PROB = {HIGH: 0.3, LOW: 0.1}


def random_policy_action(c1: CollectionComplexity, rng: np.random.Generator, assist_prob: Optional[dict] = None) -> RobotAction:
    probs = RANDOM_ASSIST_PROB if assist_prob is None else assist_prob
    return ASK if rng.random() < probs[c1] else AUTO


@dataclass(frozen=True)
class PolicyMapRow:
    t: float
    g: float
    known: KnownContext
    q1: float
    action: RobotAction


def _map_context(args):
    t_values, g_values, known, config, model = args
    rows = []
    for t in t_values:
        for g in g_values:
            sol = mpc_solve(CEState(float(t), float(g)), known, config, model)
            rows.append(PolicyMapRow(float(t), float(g), known, sol.q1, mpc_policy_action(sol.q1, replace(config, stochastic_action=False))))
    return rows


def policy_map(t_values, g_values, contexts, config: MPCConfig, model: ModelParams, threads: int = 1) -> list:
    """Solve the MPC at every (T, G) grid cell for each known context; rows ordered by context, T, G."""
    jobs = [(tuple(t_values), tuple(g_values), k, config, model) for k in contexts]
    if threads <= 1 or len(jobs) <= 1:
        parts = [_map_context(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_map_context, jobs))
    return [row for part in parts for row in part]
