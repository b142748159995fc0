import numpy as np
import pytest
from dataclasses import replace

from trustlds.domain import CollectionComplexity as C1, HumanAction, Outcome, RobotAction, engagement_events
from trustlds.dynamics import sigmoid
from trustlds.estimation import ActionFitConfig, GaussianBelief, UnidentifiableError, fit_action_model, mc_log_likelihood
from trustlds.estimation.action_model import ActionData, posterior_draws
from trustlds.simulation import generate_synthetic_logs

PRIOR_T = GaussianBelief(7.0, 0.25)
PRIOR_G = GaussianBelief(7.0, 0.25)


def _participants(logs):
    return {recs[0].participant_id: recs for recs in logs}


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    data = ActionData(rng.normal(7, 1, (5, 40)), rng.normal(8, 1, (5, 40)), (rng.random(40) < 0.7).astype(float))
    x = np.array([0.2, 0.3, -2.0])
    _, g = mc_log_likelihood(x, data)
    h = 1e-6
    fd = [(mc_log_likelihood(x + h * e, data)[0] - mc_log_likelihood(x - h * e, data)[0]) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6)


def test_single_draw_from_degenerate_posterior_equals_plug_in(model):
    logs = generate_synthetic_logs(2, 20, model, seed=4, noise_scale=0.0, initial_sd=(0.0, 0.0))
    quiet_t = replace(model.trust, q_process=0.0, r_measure=0.0)
    quiet_g = replace(model.engagement, q_process=0.0, r_measure=0.0)
    parts = _participants(logs)
    data = posterior_draws(parts, quiet_t, quiet_g, GaussianBelief(7.0, 0.0), GaussianBelief(7.0, 0.0), 1,
                           np.random.default_rng(0))[C1.HIGH]
    coef = np.array([0.2, 0.4, -2.7])
    ll, _ = mc_log_likelihood(coef, data)
    # plug-in: noise-free latent path before each autonomous attempt
    plug = 0.0
    for recs in logs:
        t = g = 7.0
        for rec, phi in zip(recs, engagement_events(recs)):
            if rec.robot_action is RobotAction.ATTEMPT_AUTONOMOUS and rec.c1 is C1.HIGH:
                p = sigmoid(coef @ [t, g, 1.0])
                plug += np.log(p if rec.human_action is HumanAction.RELY else 1 - p)
            t = model.trust.a * t + model.trust.b[rec.trust_event - 1]
            g = model.engagement.a * g + model.engagement.b[phi - 1]
    assert ll == pytest.approx(plug, abs=1e-9)


def test_all_rely_data_separates(model):
    logs = generate_synthetic_logs(4, 30, model, seed=8)
    relied = []
    for recs in logs:
        out = []
        for r in recs:
            if r.robot_action is RobotAction.ATTEMPT_AUTONOMOUS:
                r = replace(r, human_action=HumanAction.RELY, outcome=r.outcome or Outcome.SUCCESS)
            out.append(r)
        relied.append(out)
    res = fit_action_model(_participants(relied), model.trust, model.engagement, PRIOR_T, PRIOR_G,
                           ActionFitConfig(mc_samples=5, restarts=3))
    for code, row in (("L", res.params.low), ("H", res.params.high)):
        assert res.separated[code]
        assert max(abs(row.a_t), abs(row.a_g), abs(row.bias)) == pytest.approx(20.0)
        assert row.bias > 0


def test_missing_complexity_is_unidentifiable(model):
    logs = generate_synthetic_logs(3, 20, model, seed=2)
    only_low = [[r for r in recs if r.c1 is C1.LOW or r.robot_action is RobotAction.SEEK_ASSISTANCE] for recs in logs]
    with pytest.raises(UnidentifiableError, match="HIGH"):
        fit_action_model(_participants(only_low), model.trust, model.engagement, PRIOR_T, PRIOR_G,
                         ActionFitConfig(mc_samples=3, restarts=2))


def test_fit_is_seed_deterministic(model):
    parts = _participants(generate_synthetic_logs(4, 30, model, seed=6))
    cfg = ActionFitConfig(mc_samples=10, restarts=3, seed=3)
    a = fit_action_model(parts, model.trust, model.engagement, PRIOR_T, PRIOR_G, cfg)
    b = fit_action_model(parts, model.trust, model.engagement, PRIOR_T, PRIOR_G, cfg)
    assert a.params == b.params and a.loglik == b.loglik
    assert a.n_trials["L"] + a.n_trials["H"] == sum(
        r.robot_action is RobotAction.ATTEMPT_AUTONOMOUS for recs in parts.values() for r in recs)
