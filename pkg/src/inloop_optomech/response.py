"""Complex response functions of the in-loop optomechanical system.

The bare cavity susceptibility is ``1 / (kappa + i (delta - omega))``, which
follows from the linearised Langevin equation ``da/dt = -(kappa + i delta) a + ...``
under the ``exp(i omega t)`` Fourier convention used throughout the package.

Effective quantities come in two flavours selected by :class:`Mode`:

``exact``
    the full loop expression, built from the filter response at every frequency;
``effective``
    the narrow-band Lorentzian with ``kappa_eff`` and ``delta_eff`` taken from
    the loop function at the cavity detuning.
"""
from __future__ import annotations

import enum
import math
from typing import Callable

import numpy as np

from .model import (
    ConfigError,
    EffectiveCavity,
    FeedbackFilter,
    InstabilityError,
    PhysicalParams,
    SingularityError,
    WorkingPoint,
    bandpass,
)

DEFAULT_LOOP_RTOL = 1e-12


class Mode(str, enum.Enum):
    EXACT = "exact"
    EFFECTIVE = "effective"

    @classmethod
    def parse(cls, value) -> "Mode":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"mode must be 'exact' or 'effective', got {value!r}") from None


def _scalar_or_array(x):
    return x if np.ndim(x) else x[()] if isinstance(x, np.ndarray) else x


def theta_delta(kappa: float, delta: float) -> float:
    """Reference phase ``atan2(-delta, kappa)`` of the intracavity field."""
    return math.atan2(-delta, kappa)


def chi_c(omega, kappa: float, delta: float):
    """Bare cavity susceptibility ``1 / (kappa + i (delta - omega))``."""
    omega = np.asarray(omega, dtype=float)
    den = kappa + 1j * (delta - omega)
    if np.any(den == 0):
        raise SingularityError(f"cavity susceptibility pole at omega = {delta!r}")
    return _scalar_or_array(1.0 / den)


def chi_m(omega, omega_m: float, gamma_m: float):
    """Bare mechanical susceptibility ``omega_m / (omega_m^2 - omega^2 - i omega gamma_m)``."""
    omega = np.asarray(omega, dtype=float)
    den = omega_m ** 2 - omega ** 2 - 1j * omega * gamma_m
    if np.any(den == 0):
        raise SingularityError("mechanical susceptibility evaluated on its pole")
    return _scalar_or_array(omega_m / den)


def loop_prefactor(params: PhysicalParams, n_s: float) -> float:
    """Scale ``eta sqrt(2 kappa0) 2 kappa' sqrt(n_s)`` turning the filter into the loop function."""
    if n_s < 0:
        raise ConfigError("n_s must be >= 0")
    return params.eta * math.sqrt(2.0 * params.kappa0) * 2.0 * params.kappa_prime * math.sqrt(n_s)


def chi_fb(omega, params: PhysicalParams, filt: FeedbackFilter, n_s: float):
    """Rescaled loop function ``chi_fb(omega)``."""
    return loop_prefactor(params, n_s) * filt.response(omega)


def loop_denominator(omega, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint):
    """``1 - chi_fb [chi_c(omega) e^{-i theta} + chi_c(-omega)^* e^{i theta}]`` and its scale."""
    omega = np.asarray(omega, dtype=float)
    theta = theta_delta(params.kappa, wp.delta)
    cc = chi_c(omega, params.kappa, wp.delta)
    cm = np.conj(chi_c(-omega, params.kappa, wp.delta))
    fb = chi_fb(omega, params, filt, wp.n_s)
    loop = fb * (cc * np.exp(-1j * theta) + cm * np.exp(1j * theta))
    return 1.0 - loop, 1.0 + np.abs(loop)


def chi_c_eff_exact(omega, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                    rtol: float = DEFAULT_LOOP_RTOL):
    """In-loop cavity susceptibility from the full loop expression.

    Raises
    ------
    InstabilityError
        if the loop denominator vanishes (relative to its scale) anywhere on
        ``omega``, which marks the feedback instability boundary.
    """
    omega = np.asarray(omega, dtype=float)
    den, scale = loop_denominator(omega, params, filt, wp)
    bad = np.abs(den) < rtol * scale
    if np.any(bad):
        where = np.atleast_1d(omega)[np.atleast_1d(bad)][0]
        raise InstabilityError(f"loop denominator vanishes at omega = {where!r} rad/s")
    return _scalar_or_array(chi_c(omega, params.kappa, wp.delta) / den)


def effective_cavity(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint) -> EffectiveCavity:
    """Narrow-band ``(kappa_eff, delta_eff)`` from the loop function at ``omega = delta``.

    A non-positive ``kappa_eff`` is returned as is; check ``.unstable``.
    """
    fb = chi_fb(wp.delta, params, filt, wp.n_s)
    return EffectiveCavity(kappa_eff=params.kappa + fb.imag, delta_eff=wp.delta - fb.real)


def chi_c_eff_lorentzian(omega, eff: EffectiveCavity):
    """Lorentzian in-loop cavity susceptibility ``1 / (kappa_eff + i (delta_eff - omega))``."""
    eff.require_stable()
    return chi_c(omega, eff.kappa_eff, eff.delta_eff)


def normalized_gain(params: PhysicalParams, filt: FeedbackFilter, n_s: float, delta: float) -> float:
    """Normalised feedback gain ``-Im chi_fb(delta) / kappa`` (1 at the loop threshold)."""
    return -chi_fb(delta, params, filt, n_s).imag / params.kappa


def sigma_eff(omega, G: float, chi_eval: Callable):
    """Effective self-energy ``-i G^2 [chi(omega) - chi(-omega)^*]``."""
    if G < 0:
        raise ConfigError("G must be >= 0")
    omega = np.asarray(omega, dtype=float)
    return _scalar_or_array(-1j * G ** 2 * (chi_eval(omega) - np.conj(chi_eval(-omega))))


def chi_m_o_eff(omega, params: PhysicalParams, sigma_eval: Callable, rtol: float = 1e-14):
    """Dressed mechanical susceptibility ``[1/chi_m + sigma]^{-1}``."""
    omega = np.asarray(omega, dtype=float)
    inv_m = (params.omega_m ** 2 - omega ** 2 - 1j * omega * params.gamma_m) / params.omega_m
    inv = inv_m + sigma_eval(omega)
    scale = np.abs(inv_m) + params.gamma_m
    if np.any(np.abs(inv) <= rtol * scale):
        raise SingularityError("dressed mechanical susceptibility evaluated on a pole")
    return _scalar_or_array(1.0 / inv)


def damping_rates(eff: EffectiveCavity, G: float, omega_m: float):
    """Sideband rates ``(A_+, A_-)`` and ``Gamma_eff = A_- - A_+`` for a Lorentzian cavity."""
    k = eff.kappa_eff
    a_plus = G ** 2 * k / (k ** 2 + (eff.delta_eff + omega_m) ** 2)
    a_minus = G ** 2 * k / (k ** 2 + (eff.delta_eff - omega_m) ** 2)
    return a_plus, a_minus, a_minus - a_plus


class InLoopCavity:
    """Bundle of the in-loop cavity response for one working point.

    Parameters
    ----------
    params, filt, wp
        System, loop filter and linearisation point.
    mode
        ``"exact"`` evaluates the full loop expression, ``"effective"`` uses the
        narrow-band Lorentzian.
    """

    def __init__(self, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                 mode="exact", rtol: float = DEFAULT_LOOP_RTOL):
        self.params = params
        self.filter = filt
        self.wp = wp
        self.mode = Mode.parse(mode)
        self.rtol = rtol
        self.eff = effective_cavity(params, filt, wp)
        self.G = wp.coupling(params)
        self.theta = theta_delta(params.kappa, wp.delta)
        if self.mode is Mode.EFFECTIVE:
            self.eff.require_stable()

    @classmethod
    def from_effective(cls, params: PhysicalParams, eff: EffectiveCavity, G: float, delta: float):
        """Effective-mode bundle from ``(kappa_eff, delta_eff)`` and ``G`` with no explicit filter.

        The loop function at ``delta`` is the constant that reproduces ``eff``.
        """
        eff.require_stable()
        wp = WorkingPoint.from_coupling(params, G, delta)
        target = (delta - eff.delta_eff) + 1j * (eff.kappa_eff - params.kappa)
        filt = constant_filter_for(params, wp, target)
        obj = cls(params, filt, wp, mode=Mode.EFFECTIVE)
        obj.eff = eff
        return obj

    @property
    def chi_fb_delta(self) -> complex:
        return chi_fb(self.wp.delta, self.params, self.filter, self.wp.n_s)

    def chi_fb(self, omega):
        return chi_fb(omega, self.params, self.filter, self.wp.n_s)

    def chi_c_eff(self, omega):
        if self.mode is Mode.EXACT:
            return chi_c_eff_exact(omega, self.params, self.filter, self.wp, self.rtol)
        return chi_c_eff_lorentzian(omega, self.eff)

    def sigma(self, omega):
        return sigma_eff(omega, self.G, self.chi_c_eff)

    def chi_m_o_eff(self, omega):
        return chi_m_o_eff(omega, self.params, self.sigma)

    @property
    def normalized_gain(self) -> float:
        return -self.chi_fb_delta.imag / self.params.kappa


def constant_filter_for(params: PhysicalParams, wp: WorkingPoint, target: complex) -> FeedbackFilter:
    """Flat filter (gain plus delay) whose loop function equals ``target`` at ``wp.delta``.

    Only purely real or purely imaginary targets are realisable with a real
    gain and a delay shorter than one carrier period; others use the smallest
    positive delay that rotates a real gain onto ``target``.
    """
    if target == 0:
        return FeedbackFilter(gain=0.0)
    pref = loop_prefactor(params, wp.n_s)
    if pref == 0:
        raise ConfigError("cannot realise a nonzero loop function at n_s = 0")
    mag = abs(target) / pref
    phase = math.atan2(target.imag, target.real)
    if wp.delta == 0:
        if abs(target.imag) > 1e-12 * abs(target):
            raise ConfigError("a complex loop target needs a nonzero detuning")
        return FeedbackFilter(gain=math.copysign(mag, target.real))
    # pick the sign of the gain that needs the shorter delay
    best = None
    for sign, ph in ((1.0, phase), (-1.0, phase - math.pi)):
        turn = ph % (2 * math.pi)
        tau = turn / wp.delta if wp.delta > 0 else (turn - 2 * math.pi) / wp.delta
        if turn == 0:
            tau = 0.0
        if best is None or tau < best[1]:
            best = (sign, tau)
    sign, tau = best
    return FeedbackFilter(gain=sign * mag, delay=tau)


def bandpass_for_phase(delta: float, target_phase: float, quality: float, delay: float = 0.0):
    """Band-pass whose response at ``omega = delta`` has phase ``target_phase``.

    Returns ``(filter, |response|)``.  Uses the closed-form center frequency
    ``omega_0 = r |delta|`` with ``r = [cot(psi)/Q + sqrt(cot(psi)^2/Q^2 + 4)] / 2``.
    """
    if delta <= 0:
        raise ConfigError("band-pass calibration needs a positive detuning")
    phase = target_phase - delta * delay
    phase = math.atan2(math.sin(phase), math.cos(phase))
    sign = 1.0
    if math.cos(phase) < 0:
        sign = -1.0
        phase = phase - math.copysign(math.pi, phase)
    psi = phase + math.pi / 2
    if not (1e-9 < psi < math.pi - 1e-9):
        raise ConfigError("target loop phase is at the edge of the band-pass range; "
                          "use a constant filter instead")
    cot = math.cos(psi) / math.sin(psi)
    r = 0.5 * (cot / quality + math.sqrt(cot ** 2 / quality ** 2 + 4.0))
    filt = bandpass(r * delta, quality, gain=sign, delay=delay)
    return filt, abs(filt.response(delta))


def calibrate_filter(params: PhysicalParams, wp: WorkingPoint, *, quality: float,
                     target: complex, delay: float = 0.0) -> FeedbackFilter:
    """Band-pass filter whose loop function at ``wp.delta`` equals ``target`` exactly.

    A target in exact quadrature with no requested delay gets a quarter-period
    delay, since a band-pass reaches a phase of +-90 degrees only asymptotically.
    """
    if target == 0:
        return bandpass(wp.delta, quality, gain=0.0, delay=delay)
    phase = math.atan2(target.imag, target.real)
    if delay == 0 and abs(math.cos(phase - wp.delta * delay)) < 1e-6:
        # a quadrature target sits at the band-pass phase edge; a quarter-period
        # delay moves it to the filter center
        delay = 0.5 * math.pi / wp.delta
    filt, mag = bandpass_for_phase(wp.delta, phase, quality, delay)
    pref = loop_prefactor(params, wp.n_s)
    if pref == 0:
        raise ConfigError("cannot calibrate a loop at n_s = 0")
    return filt.scaled(abs(target) / (pref * mag))


def loop_target(params: PhysicalParams, delta: float, *, kappa_eff=None, delta_eff=None,
                g_fb=None, loop_phase=None) -> complex:
    """Loop function at ``delta`` from effective targets or from (gain, phase).

    Either ``kappa_eff`` and ``delta_eff`` (rad/s) or ``g_fb`` and
    ``loop_phase`` (radians) must be given.
    """
    if kappa_eff is not None and delta_eff is not None:
        return complex(delta - delta_eff, kappa_eff - params.kappa)
    if g_fb is not None and loop_phase is not None:
        s = math.sin(loop_phase)
        if g_fb == 0:
            return 0j
        if s >= 0:
            raise ConfigError("loop phase must have a negative sine for anti-squashing")
        mag = g_fb * params.kappa / -s
        return complex(mag * math.cos(loop_phase), mag * s)
    raise ConfigError("give (kappa_eff, delta_eff) or (g_fb, loop_phase)")


def with_normalized_gain(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                         g_fb: float) -> FeedbackFilter:
    """Rescale the filter gain so that the normalised gain equals ``g_fb``."""
    current = normalized_gain(params, filt, wp.n_s, wp.delta)
    if current == 0:
        if g_fb == 0:
            return filt
        raise ConfigError("filter has zero normalised gain; cannot rescale it")
    return filt.scaled(g_fb / current)
