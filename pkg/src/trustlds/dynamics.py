"""Trust and engagement linear dynamics plus the sigmoid reliance model."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .domain import (
    N_ENGAGEMENT_EVENTS,
    N_TRUST_EVENTS,
    CollectionComplexity,
    ContractError,
    EngagementEvent,
    EnvironmentParams,
    HumanAction,
    TrustEvent,
)


class LatentRangeWarning(UserWarning):
    """A simulated latent state left its plausible range."""


def _as_row(values, n, name):
    arr = np.array(values, dtype=float)
    if arr.shape != (n,):
        raise ContractError(f"{name} must have {n} entries, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LDSParams:
    """Scalar linear-Gaussian model x' = a x + b[event] + v,  y = c x + w.

    ``q_process`` and ``r_measure`` are the variances of v and w.
    """

    a: float
    b: np.ndarray
    c: float
    q_process: float
    r_measure: float

    n_events = 0

    def __post_init__(self):
        object.__setattr__(self, "b", _as_row(self.b, self.n_events, "b"))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "c", float(self.c))
        if self.q_process < 0 or self.r_measure < 0:
            raise ContractError("variances must be nonnegative")

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and (self.a, self.c, self.q_process, self.r_measure) == (other.a, other.c, other.q_process, other.r_measure)
            and np.array_equal(self.b, other.b)
        )

    def replace(self, **changes):
        return replace(self, **changes)

    def step(self, x: float, event, noise: float = 0.0) -> float:
        return self.a * x + self.b[int(event) - 1] + noise

    def measure(self, x: float, noise: float = 0.0) -> float:
        return self.c * x + noise

    def in_declared_range(self) -> bool:
        lo, hi = self.bounds()
        vals = np.r_[self.a, self.b, self.c]
        return bool(np.all(vals >= lo) and np.all(vals <= hi))

    @classmethod
    def bounds(cls):
        """Lower/upper vectors for (a, b_1..b_K, c)."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class TrustParams(LDSParams):
    n_events = N_TRUST_EVENTS

    @classmethod
    def bounds(cls):
        lo = np.r_[1e-6, np.full(cls.n_events, -1.0), 0.0]
        hi = np.r_[1.0 - 1e-6, np.full(cls.n_events, 1.0), 1.0]
        return lo, hi


@dataclass(frozen=True, eq=False)
class EngagementParams(LDSParams):
    n_events = N_ENGAGEMENT_EVENTS

    @classmethod
    def bounds(cls):
        lo = np.r_[0.0, np.zeros(cls.n_events), 0.0]
        hi = np.r_[1.0, np.full(cls.n_events, 10.0), 10.0]
        return lo, hi


@dataclass(frozen=True)
class SigmoidCoefficients:
    a_t: float
    a_g: float
    bias: float

    def index(self, t, g):
        return self.a_t * t + self.a_g * g + self.bias


@dataclass(frozen=True)
class ActionModelParams:
    low: SigmoidCoefficients
    high: SigmoidCoefficients

    def __post_init__(self):
        for row in (self.low, self.high):
            if not all(math.isfinite(v) for v in (row.a_t, row.a_g, row.bias)):
                raise ContractError("action-model coefficients must be finite")

    def for_complexity(self, c1: CollectionComplexity) -> SigmoidCoefficients:
        return self.high if c1 is CollectionComplexity.HIGH else self.low

    def as_array(self) -> np.ndarray:
        """``[[a_t, a_g, bias] for Low, ... for High]``."""
        return np.array([[r.a_t, r.a_g, r.bias] for r in (self.low, self.high)])

    @classmethod
    def from_array(cls, arr) -> "ActionModelParams":
        arr = np.asarray(arr, dtype=float)
        return cls(SigmoidCoefficients(*arr[0]), SigmoidCoefficients(*arr[1]))


@dataclass(frozen=True)
class LatentState:
    trust: float
    engagement: float

    def __post_init__(self):
        if not (math.isfinite(self.trust) and math.isfinite(self.engagement)):
            raise ContractError("latent state must be finite")


@dataclass(frozen=True)
class ModelParams:
    """The three behavior-model parameter sets bundled with the environment."""

    trust: TrustParams
    engagement: EngagementParams
    action: ActionModelParams
    env: EnvironmentParams = field(default_factory=EnvironmentParams)


def default_paper_params():
    """Trust, engagement and action-model parameters estimated from the human study."""
    trust = TrustParams(a=0.92, b=[0.76, -0.38, 0.26, 0.78, -0.43, 0.52, -0.12], c=1.00, q_process=0.22, r_measure=0.22)
    engagement = EngagementParams(
        a=0.19, b=[7.47, 6.72, 7.24, 6.38, 7.30, 6.51, 7.06, 6.59], c=9.96, q_process=1.44, r_measure=3.79
    )
    action = ActionModelParams(low=SigmoidCoefficients(0.09, 0.08, 3.6), high=SigmoidCoefficients(0.20, 0.40, -2.7))
    return trust, engagement, action


def default_model() -> ModelParams:
    return load_params(resources.files("trustlds").joinpath("default_params.json"))


def trust_step(params: TrustParams, t: float, event: TrustEvent, noise: float = 0.0) -> float:
    return params.step(t, event, noise)


def trust_measure(params: TrustParams, t: float, noise: float = 0.0) -> float:
    return params.measure(t, noise)


def engagement_step(params: EngagementParams, g: float, event: EngagementEvent, noise: float = 0.0) -> float:
    return params.step(g, event, noise)


def performance_measure(params: EngagementParams, g: float, noise: float = 0.0, clamp: bool = True) -> float:
    """Tracking score in percent. ``clamp=False`` gives the raw Gaussian value used for likelihoods."""
    p = params.measure(g, noise)
    if clamp:
        p = min(max(p, 0.0), 100.0)
    return p


def sigmoid(x):
    # numerically stable for both tails
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def reliance_probability(params: ActionModelParams, t, g, c1: CollectionComplexity):
    return sigmoid(params.for_complexity(c1).index(t, g))


def sample_human_action(params: ActionModelParams, t, g, c1, rng: np.random.Generator) -> HumanAction:
    return human_action_from_uniform(reliance_probability(params, t, g, c1), rng.random())


def human_action_from_uniform(p_rely: float, u: float) -> HumanAction:
    return HumanAction.RELY if u < p_rely else HumanAction.INTERRUPT


def check_latent_range(state: LatentState) -> None:
    if abs(state.trust) > 12.0 or not (-2.0 <= state.engagement <= 12.0):
        warnings.warn("latent state left |T| <= 12, G in [-2, 12]", LatentRangeWarning, stacklevel=2)


# ---------------------------------------------------------------- documents

def _lds_to_doc(p: LDSParams, tag: str) -> dict:
    return {
        f"A_{tag}": p.a,
        f"B_{tag}": [float(v) for v in p.b],
        f"C_{tag}": p.c,
        f"sigma2_{tag}": p.q_process,
        f"sigma2_{'y' if tag == 'T' else 'p'}": p.r_measure,
    }


def _lds_from_doc(cls, doc: dict, tag: str):
    return cls(
        a=doc[f"A_{tag}"],
        b=doc[f"B_{tag}"],
        c=doc[f"C_{tag}"],
        q_process=doc[f"sigma2_{tag}"],
        r_measure=doc[f"sigma2_{'y' if tag == 'T' else 'p'}"],
    )


def params_to_doc(model: ModelParams) -> dict:
    act = {}
    for name, row in (("L", model.action.low), ("H", model.action.high)):
        act[name] = {"a_T": row.a_t, "a_G": row.a_g, "b": row.bias}
    return {
        "trust": _lds_to_doc(model.trust, "T"),
        "engagement": _lds_to_doc(model.engagement, "G"),
        "action": act,
        "environment": asdict(model.env),
    }


def params_from_doc(doc: dict) -> ModelParams:
    try:
        act = doc["action"]
        action = ActionModelParams(
            low=SigmoidCoefficients(act["L"]["a_T"], act["L"]["a_G"], act["L"]["b"]),
            high=SigmoidCoefficients(act["H"]["a_T"], act["H"]["a_G"], act["H"]["b"]),
        )
        env = EnvironmentParams(**doc["environment"]) if "environment" in doc else EnvironmentParams()
        return ModelParams(
            trust=_lds_from_doc(TrustParams, doc["trust"], "T"),
            engagement=_lds_from_doc(EngagementParams, doc["engagement"], "G"),
            action=action,
            env=env,
        )
    except (KeyError, TypeError) as exc:
        raise ContractError(f"malformed parameter document: {exc}") from exc


def save_params(model: ModelParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_doc(model), indent=2) + "\n")


def load_params(path) -> ModelParams:
    text = path.read_text() if hasattr(path, "read_text") else Path(path).read_text()
    return params_from_doc(json.loads(text))
