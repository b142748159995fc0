"""Closed-loop dual-task simulation and Monte-Carlo policy comparison.

Random streams: session ``k`` of master seed ``s`` owns
``SeedSequence(s, spawn_key=(k, j))`` for ``j`` in :class:`Stream`. The
synthetic human always consumes six numbers per trial (two uniforms, four
normals) whatever happens, so two policies run on the same session seed see
the same schedule and the same human noise trial by trial.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .domain import (
    CollectionComplexity,
    HumanAction,
    Outcome,
    RobotAction,
    TrackingComplexity,
    TrialRecord,
    classify_engagement_event,
    classify_trust_event,
    experience_of,
    reward_collection,
    reward_tracking,
)
from .dynamics import LatentState, ModelParams, check_latent_range, human_action_from_uniform, reliance_probability
from .estimation.particle import PFConfig, PFObservation, pf_estimate, pf_init, pf_step
from .policy import CEState, KnownContext, MPCConfig, greedy_action, mpc_policy_action, mpc_solve, random_policy_action


class Policy(enum.Enum):
    MPC = "mpc"
    GREEDY = "greedy"
    RANDOM = "random"


class Stream(enum.IntEnum):
    SCHEDULE = 0
    HUMAN = 1
    ROBOT = 2
    FILTER = 3
    INITIAL = 4


def stream(seed: int, session: int, which: Stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(session, int(which))))


@dataclass(frozen=True)
class SessionConfig:
    n_trials: int = 30
    schedule: str = "balanced"  # or "iid"
    policy: Policy = Policy.GREEDY
    initial_mean: tuple = (7.0, 7.0)
    initial_sd: tuple = (0.5, 0.5)
    seed: int = 0
    session_index: int = 0
    mpc: MPCConfig = field(default_factory=MPCConfig)
    pf: PFConfig = field(default_factory=PFConfig)
    pf_use_trust_reports: bool = False
    first_experience: Outcome = Outcome.SUCCESS
    participant_id: str = "sim"
    noise_index: Optional[int] = None  # overrides session_index for all streams but the schedule

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")
        if self.schedule not in ("balanced", "iid"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "balanced" and self.n_trials % 2:
            raise ValueError("balanced schedules need an even number of trials")


@dataclass(frozen=True)
class TrialOutcome:
    record: TrialRecord
    state: LatentState  # ground truth at the start of the trial
    next_state: LatentState
    collection_reward: float
    tracking_reward: float
    q1: Optional[float] = None
    estimate: Optional[LatentState] = None

    @property
    def reward(self) -> float:
        return self.collection_reward + self.tracking_reward


@dataclass
class SessionResult:
    trials: list
    policy: Policy

    @property
    def collection_reward(self) -> float:
        return float(sum(t.collection_reward for t in self.trials))

    @property
    def tracking_reward(self) -> float:
        return float(sum(t.tracking_reward for t in self.trials))

    @property
    def total(self) -> float:
        return float(sum(t.collection_reward + t.tracking_reward for t in self.trials))

    @property
    def interruptions(self) -> int:
        return sum(t.record.human_action is HumanAction.INTERRUPT for t in self.trials)

    @property
    def assists(self) -> int:
        return sum(t.record.robot_action is RobotAction.SEEK_ASSISTANCE for t in self.trials)

    @property
    def records(self) -> list:
        return [t.record for t in self.trials]

    def summary(self) -> dict:
        return {
            "policy": self.policy.value,
            "n_trials": len(self.trials),
            "total": self.total,
            "collection": self.collection_reward,
            "tracking": self.tracking_reward,
            "interruptions": self.interruptions,
            "assists": self.assists,
        }


def make_schedule(n_trials: int, mode: str, rng: np.random.Generator, beta1: float = 0.5, beta2: float = 0.5):
    if mode == "balanced":
        if n_trials % 2:
            raise ValueError("balanced schedules need an even number of trials")
        half = n_trials // 2
        c1 = rng.permutation([CollectionComplexity.LOW] * half + [CollectionComplexity.HIGH] * half)
        c2 = rng.permutation([TrackingComplexity.SLOW] * half + [TrackingComplexity.NORMAL] * half)
    elif mode == "iid":
        c1 = [CollectionComplexity.HIGH if u < beta1 else CollectionComplexity.LOW for u in rng.random(n_trials)]
        c2 = [TrackingComplexity.NORMAL if u < beta2 else TrackingComplexity.SLOW for u in rng.random(n_trials)]
    else:
        raise ValueError(f"unknown schedule {mode!r}")
    return list(c1), list(c2)


def run_trial(state: LatentState, c1: CollectionComplexity, c2: TrackingComplexity, robot_action: RobotAction,
              prev_experience: Outcome, model: ModelParams, rng: np.random.Generator, *,
              participant_id: str = "sim", trial_index: int = 1, noise_scale: float = 1.0,
              force_human: Optional[HumanAction] = None, force_outcome: Optional[Outcome] = None) -> TrialOutcome:
    u = rng.random(2)
    z = rng.standard_normal(4) * noise_scale
    human = outcome = None
    if robot_action is RobotAction.ATTEMPT_AUTONOMOUS:
        p_rely = reliance_probability(model.action, state.trust, state.engagement, c1)
        human = force_human or human_action_from_uniform(p_rely, u[0])
        if human is HumanAction.RELY:
            outcome = force_outcome or (Outcome.SUCCESS if u[1] < model.env.p_suc(c1) else Outcome.FAILURE)
    theta = classify_trust_event(c1, robot_action, human, outcome)
    phi = classify_engagement_event(c2, robot_action, prev_experience)
    tp, ep = model.trust, model.engagement
    t_next = tp.step(state.trust, theta, math.sqrt(tp.q_process) * z[0])
    g_next = ep.step(state.engagement, phi, math.sqrt(ep.q_process) * z[1])
    nxt = LatentState(float(t_next), float(g_next))
    check_latent_range(nxt)
    p = min(max(ep.measure(g_next, math.sqrt(ep.r_measure) * z[2]), 0.0), 100.0)
    y = tp.measure(t_next, math.sqrt(tp.r_measure) * z[3])
    rec = TrialRecord(participant_id, trial_index, c1, c2, robot_action, human, outcome, y, p)
    return TrialOutcome(rec, state, nxt, reward_collection(robot_action, human, outcome), reward_tracking(c2, p))


def _initial_state(config: SessionConfig, rng) -> LatentState:
    z = rng.standard_normal(2)
    return LatentState(float(config.initial_mean[0] + config.initial_sd[0] * z[0]),
                       float(config.initial_mean[1] + config.initial_sd[1] * z[1]))


def run_session(config: SessionConfig, model: ModelParams, noise_scale: float = 1.0) -> SessionResult:
    seed, k = config.seed, config.session_index
    c1s, c2s = make_schedule(config.n_trials, config.schedule, stream(seed, k, Stream.SCHEDULE),
                             model.env.beta1, model.env.beta2)
    if config.noise_index is not None:
        k = config.noise_index
    human_rng = stream(seed, k, Stream.HUMAN)
    robot_rng = stream(seed, k, Stream.ROBOT)
    filter_rng = stream(seed, k, Stream.FILTER)
    state = _initial_state(config, stream(seed, k, Stream.INITIAL))
    mpc_cfg = replace(config.mpc, env=replace(config.mpc.env, p_suc_low=model.env.p_suc_low,
                                              p_suc_high=model.env.p_suc_high))
    belief = pf_init(config.pf, filter_rng) if config.policy is Policy.MPC else None

    prev = config.first_experience
    trials = []
    for i, (c1, c2) in enumerate(zip(c1s, c2s), start=1):
        q1 = est = None
        if config.policy is Policy.MPC:
            est = pf_estimate(belief)
            sol = mpc_solve(CEState(est.trust, est.engagement), KnownContext(c1, c2, prev), mpc_cfg, model)
            q1 = sol.q1
            action = mpc_policy_action(q1, mpc_cfg, robot_rng)
        elif config.policy is Policy.RANDOM:
            action = random_policy_action(c1, robot_rng)
        else:
            action = greedy_action(c1, c2)
        out = run_trial(state, c1, c2, action, prev, model, human_rng, participant_id=config.participant_id,
                        trial_index=i, noise_scale=noise_scale)
        trials.append(replace(out, q1=q1, estimate=est))
        rec = out.record
        if belief is not None:
            obs = PFObservation(c1, rec.human_action, rec.tracking_score,
                                rec.trust_report if config.pf_use_trust_reports else None)
            belief = pf_step(belief, model, rec.trust_event, classify_engagement_event(c2, action, prev), obs,
                             filter_rng, config.pf.resample_fraction)
        prev = experience_of(rec.robot_action, rec.human_action, rec.outcome)
        state = out.next_state
    return SessionResult(trials, config.policy)


# ------------------------------------------------------------- evaluation

def _session_job(args):
    config, model = args
    return run_session(config, model).summary()


def _run_many(configs, model, threads: int) -> list:
    jobs = [(c, model) for c in configs]
    if threads <= 1 or len(jobs) <= 1:
        return [_session_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_session_job, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def bootstrap_mean_ci(values, rng: np.random.Generator, n_resamples: int = 10_000, level: float = 0.95):
    values = np.asarray(values, dtype=float)
    idx = rng.integers(0, len(values), size=(n_resamples, len(values)))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


@dataclass
class ComparisonReport:
    policies: tuple
    sessions: dict  # policy name -> list of summaries, in session order
    stats: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"policies": list(self.policies), "stats": self.stats}


def evaluate_policies(config_a: SessionConfig, config_b: SessionConfig, n_sessions: int, model: ModelParams,
                      seed: int, threads: int = 1, n_bootstrap: int = 10_000,
                      common_random_numbers: bool = False) -> ComparisonReport:
    """Run paired sessions of two policies and summarize totals with bootstrap CIs.

    Sessions are paired by schedule. With ``common_random_numbers`` the
    synthetic human's noise streams are shared as well; otherwise policy B
    draws human, robot, filter and initial-state noise from disjoint streams.
    """
    if n_sessions < 1:
        raise ValueError("n_sessions must be positive")
    name_a, name_b = config_a.policy.value, config_b.policy.value
    if name_a == name_b:
        name_b = name_b + "_b"
    cfg_a = [replace(config_a, seed=seed, session_index=k) for k in range(n_sessions)]
    res_a = _run_many(cfg_a, model, threads)
    cfg_b = [replace(config_b, seed=seed, session_index=k,
                     noise_index=None if common_random_numbers else n_sessions + k) for k in range(n_sessions)]
    res_b = _run_many(cfg_b, model, threads)

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31 - 1,)))
    stats = {}
    for name, res in ((name_a, res_a), (name_b, res_b)):
        totals = np.array([r["total"] for r in res])
        stats[name] = {
            "mean_total": float(totals.mean()),
            "median_total": float(np.median(totals)),
            "mean_total_ci95": bootstrap_mean_ci(totals, rng, n_bootstrap),
            "interruptions": int(sum(r["interruptions"] for r in res)),
            "assists": int(sum(r["assists"] for r in res)),
            "n_sessions": n_sessions,
        }
    diff = np.array([a["total"] - b["total"] for a, b in zip(res_a, res_b)])
    stats["difference"] = {
        "label": f"{name_a} - {name_b}",
        "mean": float(diff.mean()),
        "median": float(np.median(diff)),
        "mean_ci95": bootstrap_mean_ci(diff, rng, n_bootstrap),
    }
    return ComparisonReport((name_a, name_b), {name_a: res_a, name_b: res_b}, stats)


# ------------------------------------------------------- data generation

def generate_synthetic_logs(n_participants: int, n_trials: int, model: ModelParams, seed: int, *,
                            noise_scale: float = 1.0, initial_mean=(7.0, 7.0), initial_sd=(0.5, 0.5),
                            return_states: bool = False):
    """Simulate the data-collection study: random assistance policy, balanced schedules, trust reported every trial."""
    logs, states = [], []
    width = max(2, len(str(n_participants)))
    for k in range(n_participants):
        cfg = SessionConfig(n_trials=n_trials, schedule="balanced", policy=Policy.RANDOM, seed=seed,
                            session_index=k, initial_mean=tuple(initial_mean),
                            initial_sd=tuple(initial_sd), participant_id=f"P{k + 1:0{width}d}")
        res = run_session(cfg, model, noise_scale=noise_scale)
        logs.append(res.records)
        states.append([res.trials[0].state] + [t.next_state for t in res.trials])
    return (logs, states) if return_states else logs
