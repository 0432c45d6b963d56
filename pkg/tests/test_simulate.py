import math

import numpy as np
import pytest

from inloop_optomech.linear import CHANNELS
from inloop_optomech.model import (
    ConfigError,
    FeedbackFilter,
    PhysicalParams,
    WorkingPoint,
    bandpass,
    hz_to_rad,
)
from inloop_optomech.response import calibrate_filter, constant_filter_for, loop_target
from inloop_optomech.simulate import (
    DivergenceError,
    SimConfig,
    compare_with_exact,
    default_dt,
    estimate_psd,
    linear_response_psd,
    run_simulation,
)

NO_FB = FeedbackFilter(gain=0.0)


def small(**kw):
    base = dict(omega_m_hz=1e5, gamma_m_hz=500.0, kappa_hz=1e4, kappa0_hz=5e3,
                kappa_prime_hz=2e3, delta0_hz=1e5, g0_hz=1.0, eta=0.5, n_th=50.0)
    base.update(kw)
    return PhysicalParams.from_hz(**base)


def bare_wp(p):
    return WorkingPoint(n_s=0.0, delta=p.delta0)


def test_ring_down_matches_damped_oscillator():
    p = small()
    wp = bare_wp(p)
    dt = default_dt(p, NO_FB, wp)
    cfg = SimConfig(dt=dt, duration=2e-3, noise_scales=[0.0] * len(CHANNELS))
    r = run_simulation(p, NO_FB, wp, cfg, initial_state=[1.0, 0.0])
    w1 = math.sqrt(p.omega_m ** 2 - p.gamma_m ** 2 / 4)
    t = r.t
    q = np.exp(-p.gamma_m * t / 2) * (np.cos(w1 * t) + p.gamma_m / (2 * w1) * np.sin(w1 * t))
    np.testing.assert_allclose(r.q, q, atol=1e-10)
    assert np.all(r.x == 0) and np.all(r.y == 0)


def test_thermal_variance_of_free_oscillator():
    p = small()
    wp = bare_wp(p)
    cfg = SimConfig(dt=default_dt(p, NO_FB, wp), duration=0.5, seed=3, record_decimation=5)
    r = run_simulation(p, NO_FB, wp, cfg)
    # q^2 decorrelates at the energy decay rate gamma_m
    rel_sd = math.sqrt(2.0 / (p.gamma_m * cfg.duration))
    assert np.var(r.q) == pytest.approx(p.n_th + 0.5, rel=4 * rel_sd)
    # vacuum noise only in the empty cavity: <(Re a)^2> = 1/4
    assert np.var(r.x) == pytest.approx(0.25, rel=0.05)


def test_seeded_runs_are_reproducible():
    p = small()
    wp = WorkingPoint.from_coupling(p, hz_to_rad(500.0), p.delta0)
    cfg = SimConfig(dt=default_dt(p, NO_FB, wp), duration=2e-3, seed=11)
    a = run_simulation(p, NO_FB, wp, cfg)
    b = run_simulation(p, NO_FB, wp, cfg)
    c = run_simulation(p, NO_FB, wp, SimConfig(dt=cfg.dt, duration=cfg.duration, seed=12))
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.u, b.u)
    assert not np.array_equal(a.q, c.q)


def test_decimation_and_time_axis():
    p = small()
    wp = bare_wp(p)
    dt = default_dt(p, NO_FB, wp)
    r = run_simulation(p, NO_FB, wp, SimConfig(dt=dt, duration=1000 * dt, record_decimation=10))
    assert r.q.size == 100
    assert r.dt_record == pytest.approx(10 * dt)
    np.testing.assert_allclose(np.diff(r.t), 10 * dt)


def test_step_size_rule():
    p = small()
    wp = bare_wp(p)
    dt = default_dt(p, NO_FB, wp)
    assert dt * max(p.kappa, p.omega_m, abs(wp.delta)) == pytest.approx(0.1)
    with pytest.raises(ConfigError):
        run_simulation(p, NO_FB, wp, SimConfig(dt=1.01 * dt, duration=1e-3))


def test_delay_must_be_resolved(fig3_params, fig3_wp):
    f = bandpass(fig3_wp.delta, 3.0, gain=1e-3, delay=1e-6)
    dt = default_dt(fig3_params, f, fig3_wp)
    with pytest.raises(ConfigError):
        SimConfig(dt=1e-6 / 2.5, duration=1e-3).validate(fig3_params, f, fig3_wp)
    k = SimConfig(dt=1e-6 / math.ceil(1e-6 / dt), duration=1e-3).validate(fig3_params, f,
                                                                          fig3_wp)
    assert k == math.ceil(1e-6 / dt)


def test_delayed_constant_gain_rejected(fig3_params, fig3_wp):
    f = constant_filter_for(fig3_params, fig3_wp, -0.3j * fig3_params.kappa)
    assert f.delay > 0
    dt = f.delay / math.ceil(f.delay / default_dt(fig3_params, f, fig3_wp))
    with pytest.raises(ConfigError, match="strictly proper"):
        SimConfig(dt=dt, duration=1e-3).validate(fig3_params, f, fig3_wp)


@pytest.mark.parametrize("kw", [dict(dt=0.0, duration=1.0), dict(dt=1e-6, duration=-1.0),
                                dict(dt=1e-6, duration=1.0, record_decimation=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SimConfig(**kw)


def test_unstable_loop_diverges(fig3_params, fig3_wp):
    t = loop_target(fig3_params, fig3_wp.delta, g_fb=1.5, loop_phase=-1.9)
    f = calibrate_filter(fig3_params, fig3_wp, quality=3.0, target=t)
    cfg = SimConfig(dt=default_dt(fig3_params, f, fig3_wp), duration=0.05, seed=1)
    with pytest.warns(RuntimeWarning, match="unstable"):
        with pytest.raises(DivergenceError) as info:
            run_simulation(fig3_params, f, fig3_wp, cfg, initial_state=[1.0, 0, 0, 0])
    assert 0 < info.value.time < 0.05


def test_psd_estimator_white_noise(rng):
    fs, sigma = 1e4, 2.0
    x = sigma * rng.standard_normal(2 ** 18)
    est = estimate_psd(x, fs, 1024)
    # two-sided in omega: int S d omega / 2 pi over (-fs/2, fs/2) = sigma^2
    level = sigma ** 2 / fs
    z = (est.s_total - level) / est.s_err
    assert abs(np.mean(z)) < 4 / math.sqrt(z.size)
    assert np.std(z) == pytest.approx(1.0, rel=0.1)
    assert est.omega_hz[0] > 0 and est.omega_hz[-1] < fs / 2
    assert np.all(np.isnan(est.s_rp)) and est.mode == "simulated"


def test_psd_estimator_sinusoid_power(rng):
    fs, f0, amp = 1e4, 1234.5, 3.0
    t = np.arange(2 ** 16) / fs
    x = amp * np.sin(2 * math.pi * f0 * t) + 0.01 * rng.standard_normal(t.size)
    est = estimate_psd(x, fs, 2048, overlap=0.5)
    df = fs / 2048
    assert est.omega_hz[np.argmax(est.s_total)] == pytest.approx(f0, abs=df)
    # positive-frequency half of the line carries half the variance
    assert np.sum(est.s_total) * df == pytest.approx(amp ** 2 / 4, rel=0.01)


def test_psd_estimator_needs_segments():
    with pytest.raises(ConfigError):
        estimate_psd(np.zeros(1000), 1.0, 200)


def test_linear_response_psd_of_empty_cavity():
    p = small()
    wp = bare_wp(p)
    w = np.array([p.delta0 - p.kappa, p.delta0, p.delta0 + 3 * p.kappa])
    s = linear_response_psd(w, p, NO_FB, wp, component="x")
    # vacuum input: S = kappa / 4 * (|chi(w)|^2 + |chi(-w)|^2) for Re a
    chi = lambda v: 1 / (p.kappa + 1j * (p.delta0 - v))
    np.testing.assert_allclose(s, 0.25 * p.kappa * (np.abs(chi(w)) ** 2 + np.abs(chi(-w)) ** 2),
                               rtol=1e-12)


@pytest.mark.parametrize("delay", [0.0, 2e-7])
def test_short_run_matches_exact_spectrum(fig3_params, fig3_wp, delay):
    t = loop_target(fig3_params, fig3_wp.delta, g_fb=0.6, loop_phase=-1.9)
    f = calibrate_filter(fig3_params, fig3_wp, quality=3.0, target=t, delay=delay)
    dt = default_dt(fig3_params, f, fig3_wp)
    if delay:
        dt = delay / math.ceil(delay / dt)
    cfg = SimConfig(dt=dt, duration=0.2, seed=5, record_decimation=10)
    r = run_simulation(fig3_params, f, fig3_wp, cfg)
    G = fig3_wp.coupling(fig3_params) / (2 * math.pi)
    edges = 343.13e3 + np.linspace(-5, 5, 11) * G
    cmp = compare_with_exact(r, fig3_params, f, fig3_wp, 0.01, edges)
    assert cmp.estimate.metadata["segments"] == 20
    assert cmp.max_abs_z < 4.0


def test_result_writers(tmp_path):
    p = small()
    wp = bare_wp(p)
    dt = default_dt(p, NO_FB, wp)
    r = run_simulation(p, NO_FB, wp, SimConfig(dt=dt, duration=20 * dt))
    r.to_csv(tmp_path / "r.csv")
    data = np.loadtxt(tmp_path / "r.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], r.q)
    r.to_npz(tmp_path / "r.npz")
    with np.load(tmp_path / "r.npz") as z:
        np.testing.assert_array_equal(z["photocurrent"], r.u)
