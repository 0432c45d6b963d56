"""Mechanical occupancy from the spectrum integral and from the closed form.

The integral route uses ``n_m + 1/2 = int S_qq d omega / 2 pi``.  The closed
form is the sideband-cooling result with the in-loop cavity width and an
extra feedback heating term.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .linear import dynamical_stability
from .model import (
    ConfigError,
    ConvergenceError,
    EffectiveCavity,
    FeedbackFilter,
    InstabilityError,
    PhysicalParams,
    WorkingPoint,
    rad_to_hz,
)
from .response import (
    InLoopCavity,
    Mode,
    damping_rates,
    effective_cavity,
    normalized_gain,
    with_normalized_gain,
)
from .spectra import fmt, normal_mode_frequencies, s_qq_approx, s_qq_exact, z_delta

REGIME_FACTOR = 10.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


@dataclass
class OccupancyResult:
    n_m: float
    gamma_eff: float
    a_plus: float
    a_minus: float
    n_m_eff: float
    n_m_th_eff: float
    method: str
    flags: dict = field(default_factory=dict)
    n_m_full: Optional[float] = None
    abserr: float = 0.0

    @property
    def in_regime(self) -> bool:
        return all(self.flags.values())


def regime_flags(params: PhysicalParams, eff: EffectiveCavity, G: float, a_plus: float,
                 a_minus: float, factor: float = REGIME_FACTOR) -> dict:
    """Validity conditions of the closed form, each with a ``factor`` margin."""
    gamma_eff = a_minus - a_plus
    return {
        "resolved_sideband": eff.kappa_eff * factor < abs(eff.delta_eff),
        "weak_coupling_vs_omega_m": G * factor < params.omega_m,
        "small_gamma_m": params.gamma_m * factor < min(gamma_eff, eff.kappa_eff),
        "anti_stokes_dominant": a_plus * factor < a_minus,
    }


def phonon_number_closed(params: PhysicalParams, eff: EffectiveCavity, G: float,
                         z: float, flag_factor: float = REGIME_FACTOR) -> OccupancyResult:
    """Closed-form occupancy with feedback heating.

    ``n_m = (n_th + n_eff) (gamma_m / Gamma_eff) (1 + Gamma_eff / 2 kappa_eff)`` with
    ``n_eff = z Gamma_eff / (gamma_m (2 kappa_eff + Gamma_eff))``.  The less
    approximate variance expression is returned as ``n_m_full``.
    """
    eff.require_stable()
    a_plus, a_minus, gam = damping_rates(eff, G, params.omega_m)
    if not gam > 0:
        raise InstabilityError(f"optomechanical damping {gam!r} rad/s is not positive")
    k, g = eff.kappa_eff, params.gamma_m
    n_eff = z * gam / (g * (2 * k + gam))
    n_th_eff = params.n_th + n_eff
    n_m = n_th_eff * g / gam * (1 + gam / (2 * k))
    n_prime = (2 * params.n_th * k - z) / (2 * (k + z))
    var = (k + z) / (k * (g + gam)) * (0.5 * (a_plus + a_minus) + g * n_prime * (1 + gam / (2 * k)))
    return OccupancyResult(
        n_m=n_m, gamma_eff=gam, a_plus=a_plus, a_minus=a_minus, n_m_eff=n_eff,
        n_m_th_eff=n_th_eff, method="closed_form",
        flags=regime_flags(params, eff, G, a_plus, a_minus, flag_factor),
        n_m_full=var - 0.5,
    )


def _gl(fun, a, b):
    """24-point Gauss-Legendre on each interval ``[a_i, b_i]`` (vectorised)."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    y = fun(x.ravel()).reshape(x.shape)
    return half * (y @ _GL_W)


def adaptive_integral(fun: Callable, edges: Sequence[float], rtol: float = 1e-10,
                      max_iter: int = 60, floor: float = 0.0):
    """Integrate a vectorised function over consecutive ``edges`` by bisection.

    ``floor`` is the relative accuracy below which the integrand itself is
    unreliable (round-off); the target is ``max(rtol, floor)``.
    Returns ``(value, error_estimate)``.
    """
    rtol = max(rtol, floor)
    e = np.unique(np.asarray(edges, dtype=float))
    a, b = e[:-1], e[1:]
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        whole = _gl(fun, a, b)
        halves = _gl(fun, a, m) + _gl(fun, m, b)
        err = np.abs(whole - halves)
        total = float(np.sum(halves))
        tot_err = float(np.sum(err))
        if tot_err <= rtol * abs(total):
            return total, tot_err
        bad = err > max(rtol * abs(total) / err.size, 0.05 * err.max())
        a = np.concatenate([a[~bad], a[bad], m[bad]])
        b = np.concatenate([b[~bad], m[bad], b[bad]])
        order = np.argsort(a)
        a, b = a[order], b[order]
    raise ConvergenceError(f"spectrum quadrature did not converge: relative error "
                           f"{tot_err / abs(total):.3g} > {rtol:.3g}")


def _breakpoints(params, eff, G, gamma_tot):
    centers = [params.omega_m, abs(eff.delta_eff)]
    try:
        centers.extend(normal_mode_frequencies(params, eff, G))
    except np.linalg.LinAlgError:
        pass
    widths = [max(w, 1e-6 * params.omega_m) for w in (gamma_tot, abs(eff.kappa_eff), G)
              if w > 0]
    pts = [0.0]
    for c in centers:
        for w in widths:
            for f in (0.5, 2.0, 10.0, 50.0):
                pts.extend([c - f * w, c + f * w])
        pts.append(c)
    return [p for p in pts if p >= 0]


def phonon_number_integral(params: PhysicalParams, *, filt: Optional[FeedbackFilter] = None,
                           wp: Optional[WorkingPoint] = None, eff: Optional[EffectiveCavity] = None,
                           G: Optional[float] = None, delta: Optional[float] = None,
                           mode="exact", z: Optional[float] = None, rtol: float = 1e-9,
                           tail_tol: float = 1e-6, cutoff_factor: float = 1.0) -> OccupancyResult:
    """Occupancy from ``n_m + 1/2 = int S_qq d omega / 2 pi``.

    Give either ``filt`` and ``wp`` (with ``mode``) or a Lorentzian ``eff``
    with ``G`` and ``delta``.  The cutoff ``Omega`` is raised until the
    ``omega^-4`` tail beyond it is below ``tail_tol`` of the total.
    """
    if eff is not None:
        if G is None or delta is None:
            raise ConfigError("Lorentzian occupancy needs G and delta")
        eff.require_stable()
        zz = z_delta(params, eff, delta) if z is None else z

        def spec(w):
            return s_qq_approx(w, eff, params, G, delta, zz).s_total
        method = "integral_effective"
    else:
        if filt is None or wp is None:
            raise ConfigError("give either (filt, wp) or (eff, G, delta)")
        mode = Mode.parse(mode)
        G = wp.coupling(params)
        delta = wp.delta
        eff = effective_cavity(params, filt, wp)
        if mode is Mode.EXACT:
            st = dynamical_stability(params, filt, wp)
            if not st.stable:
                raise InstabilityError(f"working point is unstable (rate {st.leading_rate:.6g})")

            def spec(w):
                return s_qq_exact(w, params, filt, wp, check_stability=False).s_total
        else:
            eff.require_stable()
            zz = z_delta(params, eff, delta)

            def spec(w):
                return s_qq_approx(w, eff, params, G, delta, zz).s_total
        method = f"integral_{mode.value}"

    a_plus, a_minus, gam = damping_rates(eff, G, params.omega_m) if eff.kappa_eff > 0 else (0, 0, 0)
    pts = _breakpoints(params, eff, G, params.gamma_m + max(gam, 0.0))
    omega_cut = cutoff_factor * 4.0 * max(params.omega_m, abs(eff.delta_eff), abs(delta))
    # rounding the abscissae near a resonance of width w at frequency W perturbs
    # the integrand by about eps W / w
    narrow = min(params.gamma_m + max(gam, 0.0), abs(eff.kappa_eff) or params.kappa)
    floor = np.finfo(float).eps * max(params.omega_m, abs(eff.delta_eff)) / narrow
    for _ in range(40):
        edges = [p for p in pts if p < omega_cut] + [omega_cut]
        total, err = adaptive_integral(spec, edges, rtol=rtol, floor=floor)
        # S ~ omega^-4 beyond the resonances
        tail = float(spec(np.array([omega_cut]))[0]) * omega_cut / 3.0
        if tail <= tail_tol * total:
            break
        omega_cut *= 2.0
    else:
        raise ConvergenceError("could not find a cutoff with a negligible spectral tail")
    n_total = (total + tail) / math.pi
    n_m = n_total - 0.5
    zz = z_delta(params, eff, delta) if z is None else z
    n_eff = zz * gam / (params.gamma_m * (2 * eff.kappa_eff + gam)) if gam > 0 else float("nan")
    flags = regime_flags(params, eff, G, a_plus, a_minus) if eff.kappa_eff > 0 else {}
    return OccupancyResult(
        n_m=n_m, gamma_eff=gam, a_plus=a_plus, a_minus=a_minus, n_m_eff=n_eff,
        n_m_th_eff=params.n_th + n_eff, method=method, flags=flags,
        abserr=(err + tail) / math.pi,
    )


def s_qq_equivalent(omega, params: PhysicalParams, eff: EffectiveCavity, G: float, delta: float):
    """Spectrum rebuilt from an equivalent feedback-free system at a modified temperature.

    Computes ``S'_qq (kappa_eff + z) / kappa_eff`` with ``S'_qq`` the spectrum of
    a plain cavity of width ``kappa_eff`` whose bath occupancy is
    ``n' = (2 n_th kappa_eff - z) / (2 (kappa_eff + z))``.
    """
    z = z_delta(params, eff, delta)
    k = eff.kappa_eff
    n_prime = (2 * params.n_th * k - z) / (2 * (k + z))
    base = s_qq_approx(omega, eff, params, G, delta, z=0.0)
    s_th_prime = params.gamma_m * (2 * n_prime + 1)
    s_prime = base.chi2 * (s_th_prime + base.s_rp)
    return s_prime * (k + z) / k


@dataclass
class CoolingCurve:
    g_fb: np.ndarray
    kappa_eff: np.ndarray
    gamma_eff: np.ndarray
    n_m_closed: np.ndarray
    n_m_integral: np.ndarray
    ratio_db: np.ndarray
    ratio_db_integral: np.ndarray

    def minimum(self, column: str = "ratio_db"):
        vals = getattr(self, column)
        i = int(np.nanargmin(vals))
        return float(self.g_fb[i]), float(vals[i])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["g_fb", "kappa_eff_hz", "gamma_eff_hz", "n_m_closed", "n_m_integral",
                         "ratio_db", "ratio_db_integral"])
            for row in zip(self.g_fb, rad_to_hz(self.kappa_eff), rad_to_hz(self.gamma_eff),
                           self.n_m_closed, self.n_m_integral, self.ratio_db,
                           self.ratio_db_integral):
                wr.writerow([fmt(v) for v in row])


def cooling_point(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint, g_fb: float,
                  mode="effective", integral: bool = True):
    """Closed-form and integral occupancy at one normalised gain."""
    f = with_normalized_gain(params, filt, wp, g_fb)
    eff = effective_cavity(params, f, wp)
    G = wp.coupling(params)
    closed = phonon_number_closed(params, eff, G, z_delta(params, eff, wp.delta))
    n_int = float("nan")
    if integral:
        n_int = phonon_number_integral(params, filt=f, wp=wp, mode=mode).n_m
    return eff, closed, n_int


def cooling_ratio_curve(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                        gains: Sequence[float], mode="effective", integral: bool = True,
                        executor=None) -> CoolingCurve:
    """Occupancy relative to plain sideband cooling versus normalised gain.

    Each method is normalised by its own zero-gain value.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.size == 0 or gains[0] != 0:
        gains = np.concatenate([[0.0], gains[gains != 0]])
    if normalized_gain(params, filt, wp.n_s, wp.delta) == 0:
        raise ConfigError("the filter has no anti-squashing component to scale")

    def point(g):
        return cooling_point(params, filt, wp, float(g), mode, integral)

    res = list(executor.map(point, gains)) if executor is not None else [point(g) for g in gains]
    k = np.array([r[0].kappa_eff for r in res])
    gam = np.array([r[1].gamma_eff for r in res])
    nc = np.array([r[1].n_m for r in res])
    ni = np.array([r[2] for r in res])
    return CoolingCurve(g_fb=gains, kappa_eff=k, gamma_eff=gam, n_m_closed=nc, n_m_integral=ni,
                        ratio_db=10 * np.log10(nc / nc[0]),
                        ratio_db_integral=10 * np.log10(ni / ni[0]))
