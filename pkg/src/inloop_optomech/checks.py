"""Randomised invariant suite run by the ``check`` subcommand.

Each check evaluates one identity on every parameter draw and records the
worst violation against its tolerance.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .linear import LinearSystem, dynamical_stability
from .model import EffectiveCavity, PhysicalParams, WorkingPoint
from .occupancy import s_qq_equivalent
from .response import (
    InLoopCavity,
    calibrate_filter,
    chi_c,
    chi_c_eff_exact,
    chi_c_eff_lorentzian,
    chi_fb,
    chi_m,
    damping_rates,
    effective_cavity,
    loop_target,
    normalized_gain,
    sigma_eff,
)
from .spectra import make_grid, s_qq_approx, s_qq_exact

__all__ = ["Draw", "random_draw", "CheckResult", "run_checks", "format_table"]


@dataclass(frozen=True)
class Draw:
    params: PhysicalParams
    filter: object
    wp: WorkingPoint
    g_fb: float


def random_draw(rng: np.random.Generator) -> Draw:
    """A red-detuned, resolved-sideband system with a band-pass anti-squashing loop."""
    wm = 2 * math.pi * 10 ** rng.uniform(4, 7)
    kappa = wm * 10 ** rng.uniform(-2, -0.5)
    f0, f1 = rng.dirichlet([2.0, 2.0, 1.0])[:2]
    params = PhysicalParams(
        omega_m=wm,
        gamma_m=wm * 10 ** rng.uniform(-7, -3),
        kappa=kappa,
        kappa0=f0 * kappa,
        kappa_prime=f1 * kappa,
        kappa_dprime=kappa - f0 * kappa - f1 * kappa,
        delta0=wm * rng.uniform(0.8, 1.2),
        g0=wm * 10 ** rng.uniform(-7, -5),
        eta=rng.uniform(0.05, 1.0),
        n_th=10 ** rng.uniform(2, 8),
    )
    G = kappa * 10 ** rng.uniform(-2, -0.5)
    wp = WorkingPoint.from_coupling(params, G, params.delta0)
    g_fb = rng.uniform(0.0, 0.9)
    phase = rng.uniform(-math.pi + 0.3, -0.3)
    target = loop_target(params, wp.delta, g_fb=max(g_fb, 1e-3), loop_phase=phase)
    filt = calibrate_filter(params, wp, quality=10 ** rng.uniform(-0.3, 1), target=target)
    if g_fb < 1e-3:
        filt = filt.with_gain(0.0)
    return Draw(params, filt, wp, g_fb)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    draws: int
    skipped: int = 0


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(b), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b) / scale))


def _check_conjugate(d: Draw, rng) -> float:
    p = d.params
    w = p.omega_m * rng.uniform(0.01, 3.0, 64)
    e1 = _rel(chi_m(-w, p.omega_m, p.gamma_m), np.conj(chi_m(w, p.omega_m, p.gamma_m)))
    e2 = _rel(d.filter.response(-w), np.conj(d.filter.response(w))) if d.filter.gain else 0.0
    f = chi_fb(w, p, d.filter, d.wp.n_s)
    e3 = _rel(chi_fb(-w, p, d.filter, d.wp.n_s), np.conj(f)) if d.filter.gain else 0.0
    return max(e1, e2, e3)


def _check_zero_gain(d: Draw, rng) -> float:
    p = d.params
    zero = d.filter.with_gain(0.0)
    w = np.sort(p.omega_m * rng.uniform(0.5, 1.5, 64))
    e1 = _rel(chi_c_eff_exact(w, p, zero, d.wp), chi_c(w, p.kappa, d.wp.delta))
    spec = s_qq_exact(w, p, zero, d.wp)
    e2 = float(np.max(np.abs(spec.s_fb)))
    eff = EffectiveCavity(p.kappa, d.wp.delta)
    lor = s_qq_approx(w, eff, p, d.wp.coupling(p), d.wp.delta)
    e3 = _rel(spec.s_total, lor.s_total)
    return max(e1, e2, e3)


def _check_state_space(d: Draw, rng) -> float:
    """Closed-loop S_qq against a brute-force inversion of the real state-space model."""
    p = d.params
    if not dynamical_stability(p, d.filter, d.wp).stable:
        return 0.0, 1
    w = np.sort(p.omega_m * rng.uniform(0.5, 1.5, 64))
    ref = LinearSystem.build(p, d.filter, d.wp).psd(w, 0)
    return _rel(s_qq_exact(w, p, d.filter, d.wp).s_total, ref), 0


def _check_kappa_identity(d: Draw, rng) -> float:
    p = d.params
    eff = effective_cavity(p, d.filter, d.wp)
    g = normalized_gain(p, d.filter, d.wp.n_s, d.wp.delta)
    return abs(eff.kappa_eff - p.kappa * (1 - g)) / p.kappa


def _check_damping(d: Draw, rng) -> float:
    p = d.params
    eff = effective_cavity(p, d.filter, d.wp)
    G = d.wp.coupling(p)
    sig = sigma_eff(p.omega_m, G, lambda w: chi_c_eff_lorentzian(w, eff))
    a_plus, a_minus, gam = damping_rates(eff, G, p.omega_m)
    return abs(-sig.imag - gam) / abs(gam)


def _check_nonnegative(d: Draw, rng):
    p = d.params
    cav = InLoopCavity(p, d.filter, d.wp, mode="effective")
    grid = make_grid(p, cav.eff, cav.G, n_linear=1001, n_cluster=50)
    worst = 0.0
    spec = s_qq_approx(grid, cav.eff, p, cav.G, d.wp.delta)
    worst = max(worst, float(np.max(-spec.s_total / np.max(spec.s_total))))
    skipped = 0
    if dynamical_stability(p, d.filter, d.wp).stable:
        ex = s_qq_exact(grid, p, d.filter, d.wp)
        worst = max(worst, float(np.max(-ex.s_total / np.max(ex.s_total))))
    else:
        skipped = 1
    return max(worst, 0.0), skipped


def _check_equivalent(d: Draw, rng) -> float:
    p = d.params
    eff = effective_cavity(p, d.filter, d.wp)
    G = d.wp.coupling(p)
    w = make_grid(p, eff, G, n_linear=501, n_cluster=20)
    lhs = s_qq_approx(w, eff, p, G, d.wp.delta).s_total
    rhs = s_qq_equivalent(w, p, eff, G, d.wp.delta)
    return _rel(rhs, lhs)


CHECKS: List[tuple] = [
    ("conjugate symmetry of chi_m, filter and chi_fb", _check_conjugate, 1e-12),
    ("zero-gain reduction of chi_c_eff and S_qq", _check_zero_gain, 1e-12),
    ("S_qq against the state-space oracle", _check_state_space, 1e-8),
    ("kappa_eff = kappa (1 - G_fb)", _check_kappa_identity, 1e-12),
    ("-Im Sigma_eff(omega_m) = A_- - A_+", _check_damping, 1e-12),
    ("S_qq >= 0 (effective and stable exact)", _check_nonnegative, 0.0),
    ("equivalent-system rescaling of S_qq", _check_equivalent, 1e-10),
]


def run_checks(n_draws: int = 100, seed: int = 0, progress: Callable = None) -> List[CheckResult]:
    """Evaluate every invariant on ``n_draws`` random systems."""
    rng = np.random.default_rng(seed)
    draws = [random_draw(rng) for _ in range(n_draws)]
    out = []
    for name, fn, tol in CHECKS:
        worst, skipped = 0.0, 0
        t0 = time.perf_counter()
        for d in draws:
            val = fn(d, rng)
            if isinstance(val, tuple):
                val, sk = val
                skipped += sk
            worst = max(worst, val)
        out.append(CheckResult(name, worst <= tol, worst, tol, n_draws, skipped))
        if progress is not None:
            progress(out[-1], time.perf_counter() - t0)
    return out


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  worst       tol       draws"]
    for r in results:
        extra = f" ({r.skipped} skipped)" if r.skipped else ""
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}    "
                     f"{r.worst:<10.3g}  {r.tolerance:<8.3g}  {r.draws}{extra}")
    return "\n".join(lines)
