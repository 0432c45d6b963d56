"""Symmetrised mechanical displacement spectrum and normal-mode extraction.

Internally spectra are two-sided in angular frequency and normalised so that
``int S(omega) d omega / 2 pi`` is the variance.  Exported CSV files are
one-sided per Hz, i.e. ``2 S``.  The ``s_thermal``, ``s_rp`` and ``s_fb``
arrays are force-noise densities; multiplying by ``chi2`` (the squared dressed
mechanical susceptibility) gives their displacement contributions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from .linear import dynamical_stability
from .model import (
    ConfigError,
    EffectiveCavity,
    FeedbackFilter,
    InstabilityError,
    OptomechError,
    PhysicalParams,
    WorkingPoint,
    rad_to_hz,
    x_zpf,
)
from .response import InLoopCavity, Mode, damping_rates


class ResolutionError(OptomechError):
    """The frequency grid is too coarse to resolve a spectral feature."""


@dataclass
class SpectrumGrid:
    omega: np.ndarray
    s_thermal: np.ndarray
    s_rp: np.ndarray
    s_fb: np.ndarray
    chi2: np.ndarray
    s_total: np.ndarray
    mode: str
    metadata: dict = field(default_factory=dict)
    s_xx: Optional[np.ndarray] = None
    s_err: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.omega)
        for name in ("s_thermal", "s_rp", "s_fb", "chi2", "s_total"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match the frequency axis")
        if n > 1 and not np.all(np.diff(self.omega) > 0):
            raise ValueError("frequency axis must be strictly increasing")

    @property
    def omega_hz(self) -> np.ndarray:
        return rad_to_hz(self.omega)

    def contributions(self):
        """Displacement contributions ``(thermal, rp, fb)`` (two-sided, same units as ``s_total``)."""
        return self.chi2 * self.s_thermal, self.chi2 * self.s_rp, self.chi2 * self.s_fb


def _assemble(omega, cav: InLoopCavity, s_rp, s_fb, mode: Mode, extra=None) -> SpectrumGrid:
    p = cav.params
    chi2 = np.abs(cav.chi_m_o_eff(omega)) ** 2
    s_th = np.full_like(omega, p.gamma_m * (2 * p.n_th + 1))
    total = chi2 * (s_th + s_rp + s_fb)
    meta = {
        "mode": mode.value,
        "G_hz": rad_to_hz(cav.G),
        "delta_hz": rad_to_hz(cav.wp.delta),
        "kappa_eff_hz": rad_to_hz(cav.eff.kappa_eff),
        "delta_eff_hz": rad_to_hz(cav.eff.delta_eff),
        "g_fb": cav.normalized_gain,
    }
    meta.update(extra or {})
    return SpectrumGrid(omega=omega, s_thermal=s_th, s_rp=s_rp, s_fb=s_fb, chi2=chi2,
                        s_total=total, mode=mode.value, metadata=meta)


def s_qq_exact(omega, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
               check_stability: bool = True) -> SpectrumGrid:
    """Displacement spectrum from the full loop expressions.

    The radiation-pressure part is split into the cavity-decay term and the
    loop-noise term; the latter's two cross terms are complex conjugates.
    """
    omega = np.asarray(omega, dtype=float)
    if check_stability:
        st = dynamical_stability(params, filt, wp)
        if not st.stable:
            raise InstabilityError(
                f"working point is dynamically unstable (growth rate {st.leading_rate:.6g} rad/s)")
    cav = InLoopCavity(params, filt, wp, mode=Mode.EXACT)
    G2 = cav.G ** 2
    ep, em = np.exp(-1j * cav.theta), np.exp(1j * cav.theta)
    cp = cav.chi_c_eff(omega)
    cn = cav.chi_c_eff(-omega)
    fb = cav.chi_fb(omega)
    s_rp = G2 * params.kappa * (np.abs(cp) ** 2 + np.abs(cn) ** 2)
    u = cp * ep + np.conj(cn) * em
    v = cn * ep + np.conj(cp) * em
    cross = np.conj(fb) * (cp + np.conj(cn)) * v
    s_fb = (0.5 * G2 * np.abs(fb) ** 2 / (params.eta * params.kappa_prime) * np.abs(u) ** 2
            - G2 * cross.real)
    return _assemble(omega, cav, s_rp, s_fb, Mode.EXACT)


def z_delta(params: PhysicalParams, eff: EffectiveCavity, delta: float) -> float:
    """Feedback noise weight ``[(delta - delta_eff)^2 + (kappa_eff - kappa)^2] / (2 eta kappa')``."""
    return (((delta - eff.delta_eff) ** 2 + (eff.kappa_eff - params.kappa) ** 2)
            / (2.0 * params.eta * params.kappa_prime))


def s_qq_approx(omega, eff: EffectiveCavity, params: PhysicalParams, G: float, delta: float,
                z: Optional[float] = None) -> SpectrumGrid:
    """Narrow-band spectrum with a Lorentzian in-loop cavity of width ``kappa_eff``."""
    omega = np.asarray(omega, dtype=float)
    cav = InLoopCavity.from_effective(params, eff, G, delta)
    if z is None:
        z = z_delta(params, eff, delta)
    lor = np.abs(cav.chi_c_eff(omega)) ** 2 + np.abs(cav.chi_c_eff(-omega)) ** 2
    s_rp = G ** 2 * eff.kappa_eff * lor
    s_fb = G ** 2 * z * lor
    return _assemble(omega, cav, s_rp, s_fb, Mode.EFFECTIVE, {"z_delta_hz": rad_to_hz(z)})


def s_qq(omega, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint, mode="exact"):
    """Dispatch to :func:`s_qq_exact` or :func:`s_qq_approx`."""
    mode = Mode.parse(mode)
    if mode is Mode.EXACT:
        return s_qq_exact(omega, params, filt, wp)
    cav = InLoopCavity(params, filt, wp, mode=Mode.EFFECTIVE)
    return s_qq_approx(omega, cav.eff, params, cav.G, wp.delta)


def s_xx_from_s_qq(spec: SpectrumGrid, params: PhysicalParams) -> SpectrumGrid:
    """Attach ``s_xx = x0^2 s_total`` (m^2 per Hz, two-sided; the CSV doubles it)."""
    x0 = x_zpf(params)
    return replace(spec, s_xx=x0 ** 2 * spec.s_total)


def s_qq_from_s_xx(s_xx, params: PhysicalParams):
    return np.asarray(s_xx) / x_zpf(params) ** 2


def make_grid(params: PhysicalParams, eff: EffectiveCavity, G: float = 0.0, *,
              span: Optional[float] = None, n_linear: int = 2001, n_cluster: int = 200):
    """Positive frequency grid around the mechanical line (rad/s).

    A linear grid over ``omega_m +- span`` is merged with log-spaced clusters
    within ``10 kappa_eff`` of ``omega_m`` and ``delta_eff``.
    """
    k = abs(eff.kappa_eff) if eff.kappa_eff != 0 else params.kappa
    if span is None:
        span = max(6.0 * G, 20.0 * k, 50.0 * params.gamma_m)
    lo = max(params.omega_m - span, 1e-3 * params.omega_m)
    hi = params.omega_m + span
    parts = [np.linspace(lo, hi, n_linear)]
    offs = k * np.logspace(-3, 1, n_cluster)
    for c in (params.omega_m, eff.delta_eff):
        parts.append(np.concatenate([c - offs, [c], c + offs]))
    grid = np.unique(np.concatenate(parts))
    return grid[(grid >= lo) & (grid <= hi)]


@dataclass(frozen=True)
class NormalModes:
    omega_plus: float
    omega_minus: float
    splitting: float
    single_peaked: bool


def _parabolic_vertex(x, y):
    """Vertex of the parabola through three points (nonuniform spacing allowed)."""
    x0, x1, x2 = x
    y0, y1, y2 = y
    d0 = (y1 - y0) / (x1 - x0)
    d1 = (y2 - y1) / (x2 - x1)
    a = (d1 - d0) / (x2 - x0)
    if a >= 0:
        return x1
    b = d0 - a * (x0 + x1)
    xv = -b / (2 * a)
    return float(np.clip(xv, x0, x2))


def find_normal_modes(spec: SpectrumGrid, prominence: float = 1.05,
                      min_points: int = 8) -> NormalModes:
    """Locate the hybrid-mode peaks of a displacement spectrum.

    Two peaks are reported only if each exceeds the minimum between them by
    the factor ``prominence``.

    Raises
    ------
    ResolutionError
        if a peak is sampled by fewer than ``min_points`` points above half
        its height.
    """
    w = spec.omega
    s = spec.s_total
    idx, _ = find_peaks(s)
    if idx.size == 0:
        raise ResolutionError("no local maximum on the grid")
    for i in idx:
        half = s[i] / 2
        lo = i
        while lo > 0 and s[lo - 1] >= half:
            lo -= 1
        hi = i
        while hi < len(s) - 1 and s[hi + 1] >= half:
            hi += 1
        if hi - lo + 1 < min_points and s[i] >= 0.01 * s.max():
            raise ResolutionError(
                f"peak near {rad_to_hz(w[i]):.6g} Hz has only {hi - lo + 1} points above half maximum")
    logs = np.log(s)

    def refine(i):
        if 0 < i < len(w) - 1:
            return _parabolic_vertex(w[i - 1:i + 2], logs[i - 1:i + 2])
        return float(w[i])

    order = idx[np.argsort(s[idx])[::-1]]
    main = order[0]
    best = None
    for j in order[1:]:
        a, b = sorted((main, j))
        saddle = s[a:b + 1].min()
        if min(s[a], s[b]) >= prominence * saddle:
            best = (a, b)
            break
    if best is None:
        f = refine(main)
        return NormalModes(omega_plus=f, omega_minus=f, splitting=0.0, single_peaked=True)
    f_minus, f_plus = refine(best[0]), refine(best[1])
    return NormalModes(omega_plus=f_plus, omega_minus=f_minus, splitting=f_plus - f_minus,
                       single_peaked=False)


def normal_mode_frequencies(params: PhysicalParams, eff: EffectiveCavity, G: float):
    """Hybrid-mode frequencies from the eigenvalues of the narrow-band drift.

    Returns the two positive imaginary parts, sorted ascending (rad/s).
    """
    M = np.array([
        [0.0, params.omega_m, 0.0, 0.0],
        [-params.omega_m, -params.gamma_m, 2 * G, 0.0],
        [0.0, 0.0, -eff.kappa_eff, eff.delta_eff],
        [G, 0.0, -eff.delta_eff, -eff.kappa_eff],
    ])
    ev = np.linalg.eigvals(M)
    pos = np.sort(np.abs(ev.imag))[::2]
    return np.sort(pos)


def fmt(x) -> str:
    """Shortest round-trip decimal representation."""
    return repr(float(x))


def write_spectrum_csv(path, spec: SpectrumGrid, extra_meta: Optional[dict] = None):
    """Write a one-sided per-Hz displacement spectrum with a commented metadata header."""
    th, rp, fb = spec.contributions()
    cols = ["omega_hz", "s_th", "s_rp", "s_fb", "s_total"]
    data = [spec.omega_hz, 2 * th, 2 * rp, 2 * fb, 2 * spec.s_total]
    if spec.s_xx is not None:
        cols.append("s_xx_m2_per_hz")
        data.append(2 * spec.s_xx)
    if spec.s_err is not None:
        cols.append("s_total_err")
        data.append(2 * spec.s_err)
    meta = dict(spec.metadata)
    meta.update(extra_meta or {})
    with open(path, "w", newline="") as fh:
        fh.write("# one-sided displacement PSD per Hz (dimensionless q^2/Hz); components are "
                 "|chi_m_eff|^2 times each force-noise term\n")
        for k, v in meta.items():
            fh.write(f"# {k} = {fmt(v) if isinstance(v, (float, np.floating)) else v}\n")
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in zip(*data):
            wr.writerow([fmt(v) for v in row])


def read_spectrum_csv(path):
    """Read back a CSV written by :func:`write_spectrum_csv` as a dict of arrays."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    arr = np.array(body, dtype=float)
    return {h: arr[:, i] for i, h in enumerate(header)}
