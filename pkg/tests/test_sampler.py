import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plfm.errors import IndexOutOfRange, InvalidConfig, LengthOutOfRange, TimeAtOne, TimeAtZero
from plfm.flow import Denoiser, FlowConfig
from plfm.nn import NetConfig
from plfm.sampler import (SCHEDULES, FlowState, SamplerConfig, em_step, generate, integrate,
                          langevin_scale, sample_rng, schedule_grid, schedule_value,
                          score_from_velocity)
from plfm.vae import VAE, VaeConfig

from oracles import gaussian_marginal, gaussian_velocity

QUIET = dict(eta_x=0.0, eta_z=0.0, langevin=False)


@pytest.fixture(scope="module")
def untrained():
    vae = VAE.init(VaeConfig(net=NetConfig(c_seq=8, c_pair=4, n_layers=1, n_heads=2)), 0)
    den = Denoiser.init(FlowConfig(net=NetConfig(c_seq=8, c_pair=4, n_layers=1, n_heads=2,
                                                 c_time=4, time_conditioned=True)), 0)
    return den, vae


def test_config_defaults_and_validation():
    cfg = SamplerConfig()
    assert (cfg.n_steps, cfg.schedule_x, cfg.schedule_z) == (400, "exponential", "quadratic")
    assert (cfg.langevin_x, cfg.langevin_z) == ("inv_t", "tan")
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg
    for bad in (dict(n_steps=0), dict(schedule_x="cubic"), dict(langevin_z="exp"), dict(eta_x=1.5),
                dict(t_ode=-0.1)):
        with pytest.raises(InvalidConfig):
            SamplerConfig(**bad).validate()
    with pytest.raises(InvalidConfig):
        SamplerConfig.from_dict({"steps": 3})


def test_score_examples():
    x = np.array([0.3, -1.2])
    assert np.array_equal(score_from_velocity(np.ones(2), x, 0.0), -x)
    assert np.allclose(score_from_velocity(x / 0.4, x, 0.4), 0.0, atol=1e-15)
    with pytest.raises(TimeAtOne):
        score_from_velocity(x, x, 1.0)


@pytest.mark.parametrize("t", np.round(np.arange(0.1, 1.0, 0.1), 1))
def test_score_matches_gaussian_path(t):
    m1, s1 = 1.7, 0.6
    grid = np.linspace(-4, 4, 100)
    v = gaussian_velocity(0.0, 1.0, m1, s1, t, grid)
    mean, std = gaussian_marginal(0.0, 1.0, m1, s1, t)
    zeta = score_from_velocity(v, grid, t)
    assert np.max(np.abs(zeta + (grid - mean) / std ** 2)) < 1e-9
    assert np.max(np.abs((1 - t) * zeta + grid - t * v)) < 1e-9


def test_schedule_examples():
    for kind in SCHEDULES:
        assert schedule_value(kind, 0, 10) == 0.0 and schedule_value(kind, 10, 10) == 1.0
    assert abs(schedule_value("exponential", 5, 10) - (1 - 10 ** -1) / (1 - 10 ** -2)) < 1e-12
    assert schedule_value("quadratic", 5, 10) == 0.25
    assert schedule_value("uniform", 3, 10) == pytest.approx(0.3)
    with pytest.raises(IndexOutOfRange):
        schedule_value("uniform", 11, 10)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(SCHEDULES), st.integers(1, 2000))
def test_schedules_strictly_monotone(kind, N):
    grid = schedule_grid(kind, N)
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(np.diff(grid) > 0)


def test_default_pair_has_x_ahead_of_z():
    N = 10 ** 4
    fx, fz = schedule_grid("exponential", N), schedule_grid("quadratic", N)
    assert np.all(fx >= fz)


def test_langevin_examples():
    assert langevin_scale("tan", 1.0) == pytest.approx(0.0, abs=1e-15)
    assert langevin_scale("tan", 0.5) == pytest.approx(math.pi / 2, rel=1e-14)
    assert langevin_scale("inv_t", 0.25) == 4.0
    with pytest.raises(TimeAtZero):
        langevin_scale("inv_t", 0.0)


def _oracle_line(x0, x1, z0, z1):
    def vfn(x, z, t_x, t_z):
        return x1 - x0, z1 - z0

    return vfn


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(SCHEDULES), st.sampled_from(SCHEDULES), st.integers(1, 60), st.integers(0, 2**31))
def test_straight_line_oracle_reaches_endpoint(sx, sz, N, seed):
    rng = np.random.default_rng(seed)
    x0, x1, z0, z1 = (rng.normal(size=s) for s in ((5, 3), (5, 3), (5, 8), (5, 8)))
    cfg = SamplerConfig(n_steps=N, schedule_x=sx, schedule_z=sz, **QUIET)
    final = integrate(x0, z0, _oracle_line(x0, x1, z0, z1), cfg, rng)
    assert np.allclose(final.x, x1, atol=1e-12) and np.allclose(final.z, z1, atol=1e-12)
    assert final.t_x == final.t_z == 1.0


def test_zero_velocity_leaves_state_unchanged():
    rng = np.random.default_rng(0)
    state = FlowState(x=rng.normal(size=(3, 3)), z=rng.normal(size=(3, 8)), t_x=0.0, t_z=0.0)
    cfg = SamplerConfig(n_steps=5, **QUIET)

    def zero(x, z, t_x, t_z):
        return np.zeros_like(x), np.zeros_like(z)

    nxt = em_step(state, zero, cfg, 0, rng)
    assert np.array_equal(nxt.x, state.x) and np.array_equal(nxt.z, state.z)
    with pytest.raises(IndexOutOfRange):
        em_step(state, zero, cfg, 5, rng)


def test_langevin_step_matches_hand_update():
    """One mid-trajectory step checked against the update written out by hand."""
    cfg = SamplerConfig(n_steps=10, eta_x=0.3, eta_z=0.2)
    x, z = np.array([[0.5, -0.2, 1.0]]), np.full((1, 8), 0.1)
    vx, vz = np.array([[0.2, 0.1, -0.3]]), np.full((1, 8), -0.4)
    n = 3
    tx, tz = schedule_value("exponential", n, 10), schedule_value("quadratic", n, 10)
    state = FlowState(x=x, z=z, t_x=tx, t_z=tz)
    out = em_step(state, lambda *a: (vx, vz), cfg, n, np.random.default_rng(7))
    eps = np.random.default_rng(7)
    ex, ez = eps.standard_normal((1, 3)), eps.standard_normal((1, 8))
    dtx = schedule_value("exponential", n + 1, 10) - tx
    dtz = schedule_value("quadratic", n + 1, 10) - tz
    bx, bz = 1 / tx, (math.pi / 2) * math.tan((math.pi / 2) * (1 - tz))
    sx, sz = (tx * vx - x) / (1 - tx), (tz * vz - z) / (1 - tz)
    want_x = x + (vx + bx * sx) * dtx + math.sqrt(2 * bx * 0.3 * dtx) * ex
    want_z = z + (vz + bz * sz) * dtz + math.sqrt(2 * bz * 0.2 * dtz) * ez
    assert np.allclose(out.x, want_x, atol=1e-14) and np.allclose(out.z, want_z, atol=1e-14)


def test_first_and_last_steps_skip_the_langevin_term():
    cfg = SamplerConfig(n_steps=4, eta_x=1.0, eta_z=1.0)
    rng = np.random.default_rng(0)
    v = (np.ones((2, 3)), np.ones((2, 8)))
    start = FlowState(x=np.zeros((2, 3)), z=np.zeros((2, 8)), t_x=0.0, t_z=0.0)
    first = em_step(start, lambda *a: v, cfg, 0, rng)
    assert np.allclose(first.x, schedule_value("exponential", 1, 4))
    assert np.allclose(first.z, schedule_value("quadratic", 1, 4))
    pen = FlowState(x=np.zeros((2, 3)), z=np.zeros((2, 8)),
                    t_x=schedule_value("exponential", 3, 4), t_z=schedule_value("quadratic", 3, 4))
    last = em_step(pen, lambda *a: v, cfg, 3, rng)
    assert np.allclose(last.x, 1 - pen.t_x) and np.allclose(last.z, 1 - pen.t_z)


@pytest.mark.parametrize("t_ode, stochastic", [(0.98, False), (1.0, True)])
def test_late_steps_switch_to_ode(t_ode, stochastic):
    # n = 390 of 400 puts t_x at about 0.9988, where dt * beta / (1 - t)^2 is near 90
    cfg = SamplerConfig(t_ode=t_ode)
    state = FlowState(x=np.zeros((2, 3)), z=np.zeros((2, 8)),
                      t_x=schedule_value("exponential", 390, 400), t_z=0.5)
    out = em_step(state, lambda *a: (np.ones((2, 3)), np.zeros((2, 8))), cfg, 390,
                  np.random.default_rng(3))
    ode_x = schedule_value("exponential", 391, 400) - state.t_x
    assert np.allclose(out.x, ode_x, rtol=0, atol=1e-15) != stochastic
    assert not np.allclose(out.z, 0.0)  # z at t = 0.5 keeps its Langevin term either way


def test_euler_error_is_first_order():
    m1, s1, mz, sz = np.array([1.5, -0.7, 0.4]), 0.3, 0.5, 2.0

    def vfn(x, z, t_x, t_z):
        return gaussian_velocity(0, 1, m1, s1, t_x, x), gaussian_velocity(0, 1, mz, sz, t_z, z)

    x0 = np.random.default_rng(0).normal(size=(4, 3))
    z0 = np.random.default_rng(1).normal(size=(4, 8))

    def run(N):
        return integrate(x0, z0, vfn, SamplerConfig(n_steps=N, **QUIET), np.random.default_rng(0))

    Ns = [25, 50, 100, 200, 400]
    errs = []
    for N in Ns:
        a, b = run(N), run(10 * N)
        errs.append(math.sqrt(np.sum((a.x - b.x) ** 2) + np.sum((a.z - b.z) ** 2)))
    slope = np.polyfit(np.log(Ns), np.log(errs), 1)[0]
    assert abs(-slope - 1.0) <= 0.15


def test_integration_is_deterministic():
    rng_x = np.random.default_rng(0)
    x0, z0 = rng_x.normal(size=(3, 3)), rng_x.normal(size=(3, 8))

    def vfn(x, z, t_x, t_z):
        return -x, -z

    cfg = SamplerConfig(n_steps=20)
    a = integrate(x0, z0, vfn, cfg, np.random.default_rng(5))
    b = integrate(x0, z0, vfn, cfg, np.random.default_rng(5))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z)


def test_sample_streams_are_distinct():
    draws = {(i, L): sample_rng(0, i, L).standard_normal() for i in range(3) for L in (8, 16)}
    assert len(set(draws.values())) == 6
    assert sample_rng(0, 1, 8).standard_normal() == draws[(1, 8)]


@pytest.mark.parametrize("schedules", [("exponential", "quadratic"), ("uniform", "uniform")])
def test_generate_returns_valid_structures(untrained, schedules):
    den, vae = untrained
    cfg = SamplerConfig(n_steps=8, schedule_x=schedules[0], schedule_z=schedules[1], seed=2)
    for index in range(3):
        p = generate(den, vae, 7, cfg, index=index)
        p.check_invariants()
        assert p.length == 7
        assert np.allclose(p.ca.mean(0), 0.0, atol=1e-9)
    a, b = generate(den, vae, 7, cfg, index=1), generate(den, vae, 7, cfg, index=1)
    assert np.array_equal(a.atom37, b.atom37)


def test_generate_length_bounds(untrained):
    den, vae = untrained
    with pytest.raises(LengthOutOfRange):
        generate(den, vae, 0, SamplerConfig(n_steps=2))
