from dataclasses import replace

import numpy as np
import pytest

from trustlds.domain import CollectionComplexity as C1, EngagementEvent, HumanAction, TrustEvent
from trustlds.dynamics import ModelParams
from trustlds.estimation import (
    GaussianBelief,
    ParticleBelief,
    PFConfig,
    PFObservation,
    kalman_filter,
    pf_estimate,
    pf_init,
    pf_step,
)
from trustlds.estimation.particle import pf_variance


def test_estimate_examples():
    b = ParticleBelief(np.array([[4.0, 2.0], [6.0, 8.0]]), np.array([0.5, 0.5]))
    e = pf_estimate(b)
    assert (e.trust, e.engagement) == (5.0, 5.0)
    one = pf_estimate(ParticleBelief(np.array([[3.0, 9.0]]), np.array([1.0])))
    assert (one.trust, one.engagement) == (3.0, 9.0)
    w = pf_estimate(ParticleBelief(np.array([[0.0, 0.0], [10.0, 10.0]]), np.array([0.9, 0.1])))
    assert w.trust == pytest.approx(1.0) and w.engagement == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ParticleBelief(np.zeros((3, 2)), np.ones(2) / 2)


def test_uses_exactly_2n_plus_1_draws(model):
    rng = np.random.default_rng(1)
    belief = pf_init(PFConfig(n_particles=50), rng)
    probe = np.random.default_rng(2)
    probe.standard_normal(100)
    probe.random()
    for obs in (PFObservation(C1.HIGH), PFObservation(C1.LOW, HumanAction.RELY, 80.0, 7.0)):
        r = np.random.default_rng(2)
        pf_step(belief, model, TrustEvent(4), EngagementEvent(5), obs, r)
        assert r.bit_generator.state == probe.bit_generator.state


def test_zero_noise_particles_follow_noise_free_path(model):
    quiet = ModelParams(replace(model.trust, q_process=0.0, r_measure=0.0),
                        replace(model.engagement, q_process=0.0, r_measure=0.0), model.action, model.env)
    rng = np.random.default_rng(0)
    belief = pf_init(PFConfig(n_particles=30, trust_sd=0.0, engagement_sd=0.0), rng)
    t = g = 7.0
    for th, ph in [(1, 5), (6, 2), (7, 8), (4, 6)]:
        t = quiet.trust.a * t + quiet.trust.b[th - 1]
        g = quiet.engagement.a * g + quiet.engagement.b[ph - 1]
        obs = PFObservation(C1.LOW, None, min(quiet.engagement.c * g, 100.0), quiet.trust.c * t)
        belief = pf_step(belief, quiet, TrustEvent(th), EngagementEvent(ph), obs, rng)
        np.testing.assert_allclose(belief.particles[:, 0], t, atol=1e-12)
        np.testing.assert_allclose(belief.particles[:, 1], g, atol=1e-12)


def test_pure_prediction_moves_mean_by_the_linear_step(model):
    rng = np.random.default_rng(3)
    n = 100_000
    belief = pf_init(PFConfig(n_particles=n), rng)
    m0 = pf_estimate(belief)
    belief = pf_step(belief, model, TrustEvent(2), EngagementEvent(3), PFObservation(C1.LOW), rng)
    m1 = pf_estimate(belief)
    var = pf_variance(belief)
    assert np.allclose(belief.weights, 1.0 / n)
    exp_t = model.trust.a * m0.trust + model.trust.b[1]
    exp_g = model.engagement.a * m0.engagement + model.engagement.b[2]
    assert abs(m1.trust - exp_t) < 4 * np.sqrt(model.trust.q_process / n)
    assert abs(m1.engagement - exp_g) < 4 * np.sqrt(model.engagement.q_process / n)
    assert var[0] == pytest.approx(model.trust.a ** 2 * 1.0 + model.trust.q_process, rel=0.03)


def test_linear_gaussian_observations_track_kalman(model):
    rng = np.random.default_rng(4)
    cfg = PFConfig(n_particles=5000)
    belief = pf_init(cfg, rng)
    events_t = [TrustEvent(i) for i in (1, 4, 5, 3, 7, 6, 4, 1)]
    events_g = [EngagementEvent(i) for i in (5, 6, 8, 1, 7, 2, 6, 5)]
    ys = [7.1, 7.6, 7.0, 7.3, 6.9, 7.5, 7.9, 8.0]
    ps = [82.0, 88.0, 70.0, 79.0, 75.0, 84.0, 83.0, 90.0]
    kt = kalman_filter(model.trust, events_t, ys, GaussianBelief(7.0, 1.0))
    kg = kalman_filter(model.engagement, events_g, ps, GaussianBelief(7.0, 1.0))
    for k in range(len(ys)):
        belief = pf_step(belief, model, events_t[k], events_g[k], PFObservation(C1.LOW, None, ps[k], ys[k]), rng)
        est = pf_estimate(belief)
        assert abs(est.trust - kt[k].mean) < 5 * np.sqrt(kt[k].variance / (0.5 * cfg.n_particles))
        assert abs(est.engagement - kg[k].mean) < 5 * np.sqrt(kg[k].variance / (0.5 * cfg.n_particles))
        assert belief.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert 0 < belief.ess <= cfg.n_particles + 1e-9


def test_action_observation_shifts_belief(model):
    rng = np.random.default_rng(5)
    base = pf_init(PFConfig(n_particles=4000), rng)
    rely = pf_step(base, model, TrustEvent(4), EngagementEvent(6), PFObservation(C1.HIGH, HumanAction.RELY),
                   np.random.default_rng(9))
    inter = pf_step(base, model, TrustEvent(7), EngagementEvent(6), PFObservation(C1.HIGH, HumanAction.INTERRUPT),
                    np.random.default_rng(9))
    # same noise; only the action likelihood and the trust event differ
    assert pf_estimate(rely).engagement > pf_estimate(inter).engagement


def test_seeded_determinism(model):
    def run():
        rng = np.random.default_rng(11)
        b = pf_init(PFConfig(n_particles=500), rng)
        for _ in range(5):
            b = pf_step(b, model, TrustEvent(1), EngagementEvent(5), PFObservation(C1.LOW, HumanAction.RELY, 85.0), rng)
        return b
    a, b = run(), run()
    assert np.array_equal(a.particles, b.particles) and np.array_equal(a.weights, b.weights)
