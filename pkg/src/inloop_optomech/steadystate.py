"""Classical working point of the driven cavity with radiation pressure and feedback.

The mean field obeys the cubic fixed-point equation

    n (kappa^2 + Delta(n)^2) = 2 kappa0 (E + c n)^2,
    Delta(n) = Delta0 - 2 g0^2 n / omega_m,   c = 2 eta kappa' g_fb(0),

where ``c n`` is the mean feedback drive.  Every non-negative root is one
branch; the sign of the residual slope classifies it (positive slope means a
statically stable branch).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from .model import (
    ConfigError,
    ConvergenceError,
    FeedbackFilter,
    InstabilityError,
    PhysicalParams,
    WorkingPoint,
    pump_amplitude,
)


@dataclass(frozen=True)
class SteadyStateBranch:
    n_s: float
    alpha_s: float
    q_s: float
    delta: float
    stable: bool
    phi_bar: float

    @property
    def working_point(self) -> WorkingPoint:
        return WorkingPoint(n_s=self.n_s, delta=self.delta)


def _residual_poly(params: PhysicalParams, filt: FeedbackFilter) -> Polynomial:
    E = pump_amplitude(params)
    b = 2.0 * params.g0 ** 2 / params.omega_m
    c = 2.0 * params.eta * params.kappa_prime * filt.dc_gain
    k2, d0, k0 = params.kappa ** 2, params.delta0, params.kappa0
    # n (k2 + (d0 - b n)^2) - 2 k0 (E + c n)^2, lowest order first
    return Polynomial([
        -2.0 * k0 * E ** 2,
        k2 + d0 ** 2 - 4.0 * k0 * E * c,
        -2.0 * d0 * b - 2.0 * k0 * c ** 2,
        b ** 2,
    ])


def steady_state_residual(n, params: PhysicalParams, filt: FeedbackFilter):
    """Fixed-point residual ``n (kappa^2 + Delta^2) - 2 kappa0 (E + Phi_bar)^2``."""
    return _residual_poly(params, filt)(np.asarray(n, dtype=float))


def _upper_bound(poly: Polynomial) -> float:
    coef = poly.trim(tol=0).coef
    if coef.size < 2:
        return 0.0
    lead = coef[-1]
    return 1.0 + float(np.max(np.abs(coef[:-1] / lead)))


def solve_steady_state(params: PhysicalParams, filt: FeedbackFilter) -> List[SteadyStateBranch]:
    """All non-negative working points, ordered by photon number.

    Raises
    ------
    ConfigError
        if no non-negative root exists (the feedback DC gain then runs away).
    """
    poly = _residual_poly(params, filt)
    deriv = poly.deriv()
    n_max = _upper_bound(poly)
    if poly.trim(tol=0).degree() < 1:
        raise ConfigError("steady-state equation is degenerate")

    # split [0, n_max] at the residual's critical points so each piece is monotone
    crit = [r.real for r in deriv.roots() if abs(r.imag) <= 1e-12 * max(1.0, abs(r)) and 0 < r.real < n_max]
    edges = [0.0] + sorted(crit) + [n_max]
    roots = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fhi = poly(lo), poly(hi)
        if flo == 0:
            roots.append(lo)
        elif flo * fhi < 0:
            try:
                roots.append(brentq(poly, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                    maxiter=500))
            except RuntimeError as exc:
                raise ConvergenceError(f"steady-state root refinement failed: {exc}") from exc
    if poly(n_max) == 0:
        roots.append(n_max)
    roots = sorted(set(roots))
    if not roots:
        raise ConfigError("no non-negative steady state exists; the feedback DC gain "
                          "makes the mean intensity run away")
    if len(roots) > 3:
        raise ConvergenceError(f"found {len(roots)} roots of a cubic: {roots}")

    c = 2.0 * params.eta * params.kappa_prime * filt.dc_gain
    out = []
    for n in roots:
        n = max(n, 0.0)
        delta = params.delta0 - 2.0 * params.g0 ** 2 * n / params.omega_m
        out.append(SteadyStateBranch(
            n_s=n,
            alpha_s=math.sqrt(n),
            q_s=math.sqrt(2.0) * params.g0 * n / params.omega_m,
            delta=delta,
            stable=bool(deriv(n) > 0),
            phi_bar=c * n,
        ))
    return out


def lowest_stable_branch(branches: List[SteadyStateBranch]) -> SteadyStateBranch:
    for b in branches:
        if b.stable:
            return b
    raise InstabilityError("no statically stable steady-state branch")


def coupling_G(params: PhysicalParams, n_s: float) -> float:
    """Many-photon coupling ``g0 sqrt(2 n_s)`` in rad/s."""
    if n_s < 0:
        raise ConfigError("n_s must be >= 0")
    return params.g0 * math.sqrt(2.0 * n_s)


def cooperativity(G: float, kappa_eff: float, gamma_m: float) -> float:
    """Effective cooperativity ``2 G^2 / (kappa_eff gamma_m)``."""
    if not kappa_eff > 0:
        raise InstabilityError(f"cooperativity needs kappa_eff > 0, got {kappa_eff!r}")
    return 2.0 * G ** 2 / (kappa_eff * gamma_m)
