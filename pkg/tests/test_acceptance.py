"""Acceptance criteria at their stated tolerances.

Each test records a one-line verdict in ``conftest.ACCEPTANCE``; the lines
are printed in the terminal summary of every pytest run.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from inloop_optomech.checks import format_table, run_checks
from inloop_optomech.config import load_scenario
from inloop_optomech.model import EffectiveCavity, PhysicalParams, hz_to_rad, rad_to_hz
from inloop_optomech.occupancy import (
    cooling_ratio_curve,
    phonon_number_closed,
    phonon_number_integral,
)
from inloop_optomech.omit import fano_params, fano_reconstruction, transmission
from inloop_optomech.response import InLoopCavity, damping_rates
from inloop_optomech.simulate import SimConfig, compare_with_exact, default_dt, run_simulation
from inloop_optomech.spectra import find_normal_modes, make_grid, s_qq, z_delta
from inloop_optomech.steadystate import cooperativity
from inloop_optomech.sweeps import sweep_detuning, sweep_gain


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_1_cooperativity():
    c = cooperativity(hz_to_rad(3836.0), hz_to_rad(1210.0), hz_to_rad(1.18))
    record(1, abs(c / 2e4 - 1) <= 0.15, f"C_eff = {c:.4g} (target 2e4 +- 15%)")


def test_criterion_2_linewidth_reduction():
    ratios = {}
    for name in ("fig2", "fig3"):
        sc = load_scenario(preset=name)
        ratios[name] = sc.params.kappa / sc.effective().kappa_eff
    ok = all(17 <= r <= 22 for r in ratios.values())
    record(2, ok, ", ".join(f"{k}: kappa/kappa_eff = {v:.3f}" for k, v in ratios.items())
           + " (target [17, 22])")


def test_criterion_3_normal_mode_splitting():
    t0 = time.perf_counter()
    sc = load_scenario(preset="fig3")
    cav = sc.cavity()
    spec = s_qq(make_grid(sc.params, cav.eff, cav.G, n_linear=8001), sc.params, sc.filter,
                sc.wp, mode=sc.mode)
    nm = find_normal_modes(spec)
    target = math.sqrt(2) * cav.G
    split_ok = not nm.single_peaked and abs(nm.splitting / target - 1) <= 0.10

    fig2 = load_scenario(preset="fig2")
    sw = fig2.section("sweep")
    ratios = np.linspace(sw["detuning_ratio_min"], sw["detuning_ratio_max"],
                         sw["detuning_points"])
    res = sweep_detuning(fig2, ratios)
    step = ratios[1] - ratios[0]
    gap_ok = (not res.failures and res.summary["min_gap_hz"] > 0
              and abs(res.summary["min_gap_ratio"] - 1) <= step)
    elapsed = time.perf_counter() - t0
    record(3, split_ok and gap_ok and elapsed < 10,
           f"splitting {rad_to_hz(nm.splitting):.1f} Hz vs sqrt2 G = {rad_to_hz(target):.1f} Hz "
           f"({nm.splitting / target - 1:+.2%}); min gap {res.summary['min_gap_hz']:.1f} Hz at "
           f"delta_eff/omega_m = {res.summary['min_gap_ratio']:.4f}; {elapsed:.2f} s")


def test_criterion_4_gain_transition():
    t0 = time.perf_counter()
    sc = load_scenario(preset="fig4")
    res = sweep_gain(sc, np.linspace(0.0, 0.98, 50))
    elapsed = time.perf_counter() - t0
    s = res.summary
    g_imp = s["max_gain_implied_coupling_hz"]
    ratio = s.get("transition_g_over_kappa_eff", float("nan"))
    ok = (1780 <= g_imp <= 2060 and 0.7 <= ratio <= 1.5 and not res.failures and elapsed < 60)
    record(4, ok, f"implied G = {g_imp:.1f} Hz (target [1780, 2060]); transition at "
                  f"G_fb = {s.get('transition_gain', float('nan')):.4f} with G/kappa_eff = "
                  f"{ratio:.3f} (target [0.7, 1.5]); {elapsed:.2f} s")


def test_criterion_5_cooling_curve():
    t0 = time.perf_counter()
    sc = load_scenario(preset="fig4")
    cc = cooling_ratio_curve(sc.params, sc.shape, sc.wp, np.linspace(0.0, 0.98, 50),
                             mode=sc.mode)
    elapsed = time.perf_counter() - t0
    g, db = cc.minimum()
    gi, dbi = cc.minimum("ratio_db_integral")
    ok = (abs(g - 0.90) <= 0.05 and abs(db + 5) <= 1 and abs(gi - 0.90) <= 0.05
          and abs(dbi + 5) <= 1 and elapsed < 60)
    record(5, ok, f"closed form: minimum {db:.3f} dB at G_fb = {g:.3f}; integral: {dbi:.3f} dB "
                  f"at G_fb = {gi:.3f} (target 0.90 +- 0.05, -5 +- 1 dB); {elapsed:.2f} s")


def regime_draw(rng):
    """A random system deep inside the closed-form validity regime."""
    wm = 2 * math.pi * 10 ** rng.uniform(5, 7)
    k = wm * 10 ** rng.uniform(-1.5, -0.8)
    f0, f1 = rng.dirichlet([2.0, 2.0, 1.0])[:2]
    keff = wm * 10 ** rng.uniform(-3, -1.7)
    deff = wm * (1 + rng.uniform(-0.05, 0.05))
    delta = deff + rng.uniform(-1, 1) * 0.5 * k
    G = keff * 10 ** rng.uniform(-1.3, -0.5)
    eff = EffectiveCavity(keff, deff)
    gam = damping_rates(eff, G, wm)[2]
    p = PhysicalParams(omega_m=wm, gamma_m=gam * 10 ** rng.uniform(-4, -1.8), kappa=k,
                       kappa0=f0 * k, kappa_prime=f1 * k, kappa_dprime=k - f0 * k - f1 * k,
                       delta0=delta, g0=wm * 1e-6, eta=rng.uniform(0.05, 1.0),
                       n_th=10 ** rng.uniform(3, 7))
    return p, eff, G, delta


def test_criterion_6_closed_form_vs_integral():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst, outside = 0.0, 0
    for _ in range(50):
        p, eff, G, delta = regime_draw(rng)
        closed = phonon_number_closed(p, eff, G, z_delta(p, eff, delta), flag_factor=50)
        outside += not closed.in_regime
        num = phonon_number_integral(p, eff=eff, G=G, delta=delta, mode="effective")
        worst = max(worst, abs(closed.n_m / num.n_m - 1))
    elapsed = time.perf_counter() - t0
    record(6, worst <= 0.05 and outside == 0 and elapsed < 120,
           f"worst disagreement {worst:.3%} over 50 draws ({outside} outside the regime, "
           f"target 5%); {elapsed:.2f} s")


@pytest.mark.slow
def test_criterion_7_simulation_matches_exact_spectrum():
    t0 = time.perf_counter()
    base = load_scenario(preset="fig3", mode="exact")
    sim = base.section("simulation")
    details, ok = [], True
    for g in (0.0, 0.5, 0.9):
        sc = load_scenario(preset="fig3", mode="exact", gain=g)
        cfg = SimConfig(dt=default_dt(sc.params, sc.filter, sc.wp),
                        duration=sim["duration_s"], seed=sim["seed"],
                        record_decimation=sim["record_decimation"])
        res = run_simulation(sc.params, sc.filter, sc.wp, cfg)
        G = rad_to_hz(sc.G)
        f_m = rad_to_hz(sc.params.omega_m)
        edges = np.linspace(f_m - 5 * G, f_m + 5 * G, sim["bins"] + 1)
        cmp = compare_with_exact(res, sc.params, sc.filter, sc.wp, sim["segment_s"], edges)
        ok &= cmp.max_abs_z <= 3.0 and len(cmp.z) == sim["bins"]
        details.append(f"G_fb={g}: max|z|={cmp.max_abs_z:.2f}")
    elapsed = time.perf_counter() - t0
    record(7, ok, "; ".join(details) + f" over {sim['bins']} bins (target 3); {elapsed:.1f} s")


def test_criterion_8_omit_identities():
    sc = load_scenario(preset="fig3", mode="exact")
    cav = sc.cavity()
    p = sc.params
    w = np.linspace(p.omega_m - 3 * p.kappa, p.omega_m + 3 * p.kappa, 10 ** 4)
    recon = fano_reconstruction(w, cav)
    direct = np.abs(transmission(w, cav)) ** 2
    rel = float(np.max(np.abs(recon / direct - 1)))
    eps, q, _ = fano_params(p.omega_m, cav)
    eq = abs(eps + q)
    matched = InLoopCavity.from_effective(p, EffectiveCavity(cav.eff.kappa_eff, p.omega_m),
                                          cav.G, sc.wp.delta)
    q_m = fano_params(p.omega_m, matched)[1]
    tiny = 4 * np.finfo(float).eps
    ok = rel <= 1e-10 and eq <= tiny * max(abs(eps), abs(q), 1.0) and abs(q_m) <= tiny
    record(8, ok, f"max relative Fano residual {rel:.2e} (target 1e-10); |eps+q|(omega_m) = "
                  f"{eq:.1e}; q(omega_m) at delta_eff = omega_m: {q_m:.1e}")


def test_criterion_9_invariant_suite():
    t0 = time.perf_counter()
    results = run_checks(n_draws=100, seed=0)
    elapsed = time.perf_counter() - t0
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    record(9, not failed and elapsed < 30,
           f"{len(results) - len(failed)}/{len(results)} checks pass on 100 draws"
           + (f"; failed: {', '.join(failed)}" if failed else "") + f"; {elapsed:.2f} s")
