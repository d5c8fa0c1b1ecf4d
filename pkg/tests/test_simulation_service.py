import numpy as np
import pytest

from netgame.errors import DomainError, SteadyStateDivergenceError
from netgame.models.schemas import SchedulingPolicy
from netgame.services.covariance_service import build_operators, steady_state_direct
from netgame.services.model_service import build_model
from netgame.services.scheduler_service import costs_at, nash_iterative
from netgame.services.simulation_service import (
    empirical_costs,
    empirical_covariance,
    simulate_ensemble,
    simulate_trajectories,
)
from netgame.utils.rng import make_streams
from tests.factories import spec_from

POLICY = SchedulingPolicy(p=0.4, q=0.5)


def test_streams_are_reproducible_and_independent():
    a, b = make_streams(5), make_streams(5)
    assert np.array_equal(a.noise.standard_normal(8), b.noise.standard_normal(8))
    c = make_streams(5, member=0)
    d = make_streams(5, member=1)
    assert not np.array_equal(c.sched1.random(8), d.sched1.random(8))


def test_trajectory_layout(example1_model, settings):
    spec = example1_model.spec
    log = simulate_trajectories(spec, example1_model.riccati, POLICY, 1.0, seed=3, settings=settings)
    assert log.times.shape == (101,)
    assert log.times[-1] == pytest.approx(1.0)
    assert log.x.shape == (101, 1) and log.u2.shape == (101, 1)
    assert np.array_equal(log.e1, log.x - log.xhat1)
    assert set(np.unique(log.gamma1)) <= {0, 1}
    assert log.seed == 3


def test_trajectory_is_seed_deterministic(pe_model, settings):
    runs = [simulate_trajectories(pe_model.spec, pe_model.riccati, POLICY, 0.5, seed=11, settings=settings) for _ in range(2)]
    for name in ("x", "xhat1", "xhat2", "u1", "u2", "gamma1", "gamma2"):
        assert np.array_equal(getattr(runs[0], name), getattr(runs[1], name))
    other = simulate_trajectories(pe_model.spec, pe_model.riccati, POLICY, 0.5, seed=12, settings=settings)
    assert not np.array_equal(runs[0].x, other.x)


@pytest.mark.parametrize("scheme", ["euler", "exact"])
def test_full_communication_keeps_estimates_exact(example1_model, settings, scheme):
    log = simulate_trajectories(
        example1_model.spec, example1_model.riccati, SchedulingPolicy(p=0.0, q=0.0), 0.2, seed=1,
        scheme=scheme, settings=settings,
    )
    assert np.all(log.e1 == 0.0) and np.all(log.e2 == 0.0)
    assert np.all(log.gamma1 == 1) and np.all(log.gamma2 == 1)
    # u1 = -K1 x with K1 = R1^-1 B1' P
    P = example1_model.riccati.P[0, 0]
    assert np.allclose(log.u1[:, 0], -P * log.x[:, 0])
    costs = empirical_costs(log, example1_model.spec)
    assert costs.rate1 == pytest.approx(100.0)
    assert costs.rate2 == pytest.approx(100.0)


def test_horizon_must_be_multiple_of_step(example1_model, settings):
    with pytest.raises(DomainError, match="multiple"):
        simulate_trajectories(example1_model.spec, example1_model.riccati, POLICY, 0.015, seed=0, settings=settings)


def test_unknown_scheme(example1_model, settings):
    with pytest.raises(DomainError, match="scheme"):
        simulate_trajectories(example1_model.spec, example1_model.riccati, POLICY, 0.1, seed=0, scheme="rk4", settings=settings)


def test_ensemble_rejects_divergent_policy(example1_model, settings):
    m = example1_model
    with pytest.raises(SteadyStateDivergenceError):
        simulate_ensemble(m.spec, m.riccati, m.disc, SchedulingPolicy(p=1.0, q=1.0), 100, 4, 0, settings=settings)


def test_ensemble_independent_of_thread_count(example1_model, settings):
    m = example1_model
    one = simulate_ensemble(m.spec, m.riccati, m.disc, POLICY, 300, 6, 9, settings=settings, threads=1)
    three = simulate_ensemble(m.spec, m.riccati, m.disc, POLICY, 300, 6, 9, settings=settings, threads=3)
    assert np.array_equal(one.Sigma, three.Sigma)
    assert one.quadratic == three.quadratic
    assert one.burn_in == 30


def test_per_tick_costs_rescale_rates(example1_model, settings):
    m = example1_model
    stats = empirical_covariance(m.spec, m.riccati, m.disc, POLICY, 200, 3, 2, settings=settings)
    costs = empirical_costs(stats, m.spec)
    per_tick = costs.per_tick(m.spec.lam)
    assert per_tick.J1 - costs.quadratic == pytest.approx(25 * stats.rate1 * 0.01 + 17 * stats.rate2 * 0.01)


@pytest.mark.slow
def test_monte_carlo_matches_analytic_steady_state(example1_model, direct_settings):
    m = example1_model
    ne = nash_iterative(m, settings=direct_settings)
    policy = SchedulingPolicy(p=ne.p_star, q=ne.q_star)
    stats = simulate_ensemble(
        m.spec, m.riccati, m.disc, policy, ticks=50_000, ensemble=200, seed_base=2024,
        scheme="exact", settings=direct_settings,
    )
    Sigma = steady_state_direct(build_operators(m.disc, policy), direct_settings)
    allowed = np.maximum(0.05 * np.abs(Sigma), 3 * stats.stderr)
    assert np.all(np.abs(stats.Sigma - Sigma) <= allowed), (stats.Sigma, Sigma)

    analytic = costs_at(m, policy.p, policy.q, direct_settings)
    per_tick = empirical_costs(stats, m.spec).per_tick(m.spec.lam)
    assert per_tick.J1 == pytest.approx(analytic.J1, rel=0.05)
    assert per_tick.J2 == pytest.approx(analytic.J2, rel=0.05)
    assert stats.rate1 * m.spec.h == pytest.approx(1 - policy.p, abs=0.01)


@pytest.mark.slow
def test_euler_and_exact_schemes_agree(example1_model, settings):
    m = example1_model
    kwargs = dict(ticks=5_000, ensemble=20, seed_base=4, settings=settings)
    euler = simulate_ensemble(m.spec, m.riccati, m.disc, POLICY, scheme="euler", **kwargs)
    exact = simulate_ensemble(m.spec, m.riccati, m.disc, POLICY, scheme="exact", **kwargs)
    assert euler.quadratic == pytest.approx(exact.quadratic, rel=0.2)


EQUILIBRIUM = SchedulingPolicy(p=0.4013, q=0.4934)


def test_long_run_at_equilibrium(example1_model, direct_settings):
    m = example1_model
    log = simulate_trajectories(m.spec, m.riccati, EQUILIBRIUM, 500.0, seed=21, scheme="exact", settings=direct_settings)
    n = len(log.times) - 1

    # a delivered packet resets that player's estimation error
    assert np.all(log.e1[log.gamma1 == 1] == 0.0)
    assert np.all(log.e2[log.gamma2 == 1] == 0.0)

    for gamma, silent in ((log.gamma1, EQUILIBRIUM.p), (log.gamma2, EQUILIBRIUM.q)):
        freq = gamma[:n].mean()
        assert abs(freq - (1 - silent)) <= 3 * np.sqrt(silent * (1 - silent) / n)

    Sigma = steady_state_direct(build_operators(m.disc, EQUILIBRIUM), direct_settings)
    for e, var in ((log.e1[:, 0], Sigma[0, 0]), (log.e2[:, 0], Sigma[1, 1])):
        assert np.mean(e * e) == pytest.approx(var, rel=0.25)
        # long silent runs reach several steady-state deviations; none should run away
        assert np.all(np.abs(e) <= 20 * np.sqrt(var))

    costs = empirical_costs(log, m.spec)
    lam = m.spec.lam
    gap = (lam[0, 0] + lam[1, 0]) * costs.rate1 + (lam[0, 1] + lam[1, 1]) * costs.rate2
    assert costs.J1 - costs.J2 == pytest.approx(gap, abs=1e-9 * max(abs(costs.J1), 1.0))


@pytest.mark.parametrize("scheme", ["euler", "exact"])
def test_noiseless_silent_run_stays_at_rest(settings, scheme):
    spec = spec_from(A=1.5, B1=1.0, B2=0.5, G=0.0, Q=4.0, R1=1.0, R2=0.5)
    model = build_model(spec, settings)
    log = simulate_trajectories(spec, model.riccati, SchedulingPolicy(p=1.0, q=1.0), 2.0, seed=0, scheme=scheme, settings=settings)
    for name in ("x", "xhat1", "xhat2", "u1", "u2", "gamma1", "gamma2"):
        assert np.all(getattr(log, name) == 0), name
    costs = empirical_costs(log, spec)
    assert costs.quadratic == 0.0 and costs.J1 == 0.0 and costs.J2 == 0.0


def test_noiseless_costs_are_communication_only(settings):
    spec = spec_from(A=1.5, B1=1.0, B2=0.5, G=0.0, Q=4.0, R1=1.0, R2=0.5)
    model = build_model(spec, settings)
    log = simulate_trajectories(spec, model.riccati, SchedulingPolicy(p=0.5, q=0.5), 2.0, seed=4, settings=settings)
    costs = empirical_costs(log, spec)
    assert costs.quadratic == 0.0
    assert costs.J1 == pytest.approx(25 * costs.rate1 + 17 * costs.rate2, rel=1e-12)


def test_doubling_ensemble_shrinks_standard_error(example1_model, settings):
    m = example1_model
    small, large = (
        simulate_ensemble(m.spec, m.riccati, m.disc, POLICY, 400, size, 5, settings=settings) for size in (200, 400)
    )
    ratios = [small.stderr[i, j] / large.stderr[i, j] for i, j in ((0, 0), (0, 1), (1, 1))]
    ratios.append(small.quadratic_stderr / large.quadratic_stderr)
    assert 1.2 <= float(np.median(ratios)) <= 1.65
