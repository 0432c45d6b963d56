"""Physical parameter types, unit conventions and validation.

All rates and frequencies are stored as angular quantities (rad/s).  The
``from_hz`` constructors and :func:`hz_to_rad` / :func:`rad_to_hz` are the only
places where ordinary frequency is converted, so a factor of 2*pi can only
enter at the boundary.

Fourier convention: ``f(omega) = int dt exp(i omega t) f(t)``, so a time
derivative maps to ``-i omega`` and a causal filter with Laplace transfer
function ``H(s)`` has frequency response ``H(-i omega)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import constants, signal

HBAR = constants.hbar
H_PLANCK = constants.h
K_B = constants.k
C_LIGHT = constants.c
TWO_PI = 2.0 * math.pi


class OptomechError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OptomechError, ValueError):
    """Invalid or inconsistent parameters."""


class InstabilityError(OptomechError):
    """The requested working point is past a stability threshold."""


class SingularityError(OptomechError):
    """A response function was evaluated at (or numerically on) a pole."""


class ConvergenceError(OptomechError):
    """A numerical procedure did not reach its requested tolerance."""


def hz_to_rad(f):
    return np.multiply(f, TWO_PI) if isinstance(f, np.ndarray) else f * TWO_PI


def rad_to_hz(w):
    return np.divide(w, TWO_PI) if isinstance(w, np.ndarray) else w / TWO_PI


def thermal_occupancy(temperature: float, omega_m: float) -> float:
    """High-temperature bath occupancy ``k_B T / (hbar omega_m)``."""
    if temperature < 0:
        raise ConfigError("temperature must be >= 0")
    if not omega_m > 0:
        raise ConfigError("omega_m must be > 0")
    return K_B * temperature / (HBAR * omega_m)


@dataclass(frozen=True)
class PhysicalParams:
    """Fixed constants of the membrane-in-the-middle system.

    Every rate is an amplitude decay rate in rad/s.  ``mass`` may be ``None``
    when only dimensionless spectra are needed.
    """

    omega_m: float
    gamma_m: float
    kappa: float
    kappa0: float
    kappa_prime: float
    kappa_dprime: float
    delta0: float
    g0: float
    eta: float
    n_th: float
    pump_power: float = 0.0
    laser_wavelength: float = 1064e-9
    mass: Optional[float] = None

    def __post_init__(self):
        for name in ("omega_m", "gamma_m", "kappa", "kappa0", "kappa_prime",
                     "laser_wavelength"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v!r}")
        # zero internal loss and zero coupling are both meaningful limits
        for name in ("kappa_dprime", "g0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")
        if not math.isfinite(self.delta0):
            raise ConfigError("delta0 must be finite")
        total = self.kappa0 + self.kappa_prime + self.kappa_dprime
        # exact up to the rounding of the Hz -> rad/s conversion
        if not math.isclose(total, self.kappa, rel_tol=1e-12, abs_tol=0.0):
            raise ConfigError(
                f"kappa ({self.kappa!r}) != kappa0 + kappa_prime + kappa_dprime ({total!r})")
        if not (0 < self.eta <= 1):
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta!r}")
        if not (math.isfinite(self.n_th) and self.n_th >= 0):
            raise ConfigError(f"n_th must be >= 0, got {self.n_th!r}")
        if not (math.isfinite(self.pump_power) and self.pump_power >= 0):
            raise ConfigError(f"pump_power must be >= 0, got {self.pump_power!r}")
        if self.mass is not None and not (math.isfinite(self.mass) and self.mass > 0):
            raise ConfigError(f"mass must be > 0, got {self.mass!r}")

    @classmethod
    def from_hz(cls, *, omega_m_hz, gamma_m_hz, kappa_hz, kappa0_hz, kappa_prime_hz,
                kappa_dprime_hz=None, delta0_hz, g0_hz, eta, n_th=None,
                temperature=None, pump_power=0.0, laser_wavelength=1064e-9, mass=None):
        """Build from ordinary frequencies.

        ``kappa_dprime_hz`` defaults to the remainder of ``kappa_hz``.  Exactly
        one of ``n_th`` and ``temperature`` must be given.
        """
        if (n_th is None) == (temperature is None):
            raise ConfigError("give exactly one of n_th and temperature")
        if kappa_dprime_hz is None:
            kappa_dprime_hz = kappa_hz - kappa0_hz - kappa_prime_hz
        omega_m = hz_to_rad(omega_m_hz)
        kappa0 = hz_to_rad(kappa0_hz)
        kappa_prime = hz_to_rad(kappa_prime_hz)
        kappa_dprime = hz_to_rad(kappa_dprime_hz)
        if n_th is None:
            n_th = thermal_occupancy(temperature, omega_m)
        return cls(
            omega_m=omega_m,
            gamma_m=hz_to_rad(gamma_m_hz),
            kappa=kappa0 + kappa_prime + kappa_dprime,
            kappa0=kappa0,
            kappa_prime=kappa_prime,
            kappa_dprime=kappa_dprime,
            delta0=hz_to_rad(delta0_hz),
            g0=hz_to_rad(g0_hz),
            eta=eta,
            n_th=n_th,
            pump_power=pump_power,
            laser_wavelength=laser_wavelength,
            mass=mass,
        )

    def replace(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


def x_zpf(params: PhysicalParams) -> float:
    """Zero-point displacement ``sqrt(hbar / (2 m omega_m))`` in metres."""
    if params.mass is None:
        raise ConfigError("x_zpf needs the effective mass; none was configured")
    return math.sqrt(HBAR / (2.0 * params.mass * params.omega_m))


def pump_amplitude(params: PhysicalParams) -> float:
    """Drive amplitude ``sqrt(P / (hbar omega_L))`` in sqrt(photons/s)."""
    if params.pump_power < 0:
        raise ConfigError("pump power must be >= 0")
    return math.sqrt(params.pump_power * params.laser_wavelength / (H_PLANCK * C_LIGHT))


def _conjugate_closed(values: Sequence[complex], rtol=1e-9) -> bool:
    vals = np.asarray(values, dtype=complex)
    if vals.size == 0:
        return True
    scale = max(1.0, float(np.max(np.abs(vals))))
    remaining = list(vals)
    while remaining:
        v = remaining.pop()
        if abs(v.imag) <= rtol * scale:
            continue
        dist = [abs(w - np.conj(v)) for w in remaining]
        if not dist or min(dist) > rtol * scale:
            return False
        remaining.pop(int(np.argmin(dist)))
    return True


@dataclass(frozen=True)
class FeedbackFilter:
    """Causal loop filter ``gain * exp(i omega delay) * prod(s - z) / prod(s - p)``.

    Zeros and poles are Laplace-plane angular frequencies (rad/s) and the
    response is evaluated at ``s = -i omega``.  A real impulse response needs
    conjugate-closed zeros and poles and a real gain.
    """

    gain: float
    zeros: tuple = field(default=())
    poles: tuple = field(default=())
    delay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "zeros", tuple(complex(z) for z in self.zeros))
        object.__setattr__(self, "poles", tuple(complex(p) for p in self.poles))
        if not math.isfinite(self.gain):
            raise ConfigError("filter gain must be finite")
        if not (math.isfinite(self.delay) and self.delay >= 0):
            raise ConfigError("filter delay must be >= 0")
        if len(self.zeros) > len(self.poles):
            raise ConfigError("filter must be proper (no more zeros than poles)")
        if not (_conjugate_closed(self.zeros) and _conjugate_closed(self.poles)):
            raise ConfigError("zeros and poles must be closed under complex conjugation")
        for p in self.poles:
            if not p.real < 0:
                raise ConfigError(f"filter pole {p} is not in the left half plane")

    def response(self, omega):
        """Frequency response ``g_fb(omega)`` (complex, same shape as ``omega``)."""
        omega = np.asarray(omega, dtype=float)
        s = -1j * omega
        num = np.ones_like(s)
        for z in self.zeros:
            num = num * (s - z)
        den = np.ones_like(s)
        for p in self.poles:
            den = den * (s - p)
        out = self.gain * np.exp(1j * omega * self.delay) * num / den
        return out if out.ndim else complex(out)

    @property
    def dc_gain(self) -> float:
        """Integral of the impulse response, ``g_fb(0)``."""
        return float(np.real(self.response(0.0)))

    @property
    def strictly_proper(self) -> bool:
        return len(self.zeros) < len(self.poles)

    def scaled(self, factor: float) -> "FeedbackFilter":
        return replace(self, gain=self.gain * factor)

    def with_gain(self, gain: float) -> "FeedbackFilter":
        return replace(self, gain=gain)

    def state_space(self):
        """Real (A, B, C, D) realisation of the rational part (delay excluded)."""
        if not self.poles:
            return (np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                    np.array([[self.gain]]))
        A, B, C, D = signal.zpk2ss(np.array(self.zeros), np.array(self.poles),
                                   self.gain if self.gain != 0 else 1.0)
        if self.gain == 0:
            C, D = np.zeros_like(C), np.zeros_like(D)
        return (np.real(A), np.real(B), np.real(C), np.real(D))


def bandpass(center: float, quality: float, gain: float = 1.0, delay: float = 0.0) -> FeedbackFilter:
    """Second-order band-pass with unit peak response at ``center`` (rad/s)."""
    if center <= 0 or quality <= 0:
        raise ConfigError("band-pass center and quality must be > 0")
    bw = center / quality
    poles = np.roots([1.0, bw, center ** 2])
    return FeedbackFilter(gain=gain * bw, zeros=(0.0,), poles=tuple(poles), delay=delay)


def zero_filter() -> FeedbackFilter:
    return FeedbackFilter(gain=0.0)


@dataclass(frozen=True)
class EffectiveCavity:
    """Narrow-band description of the in-loop cavity (rad/s)."""

    kappa_eff: float
    delta_eff: float

    @property
    def unstable(self) -> bool:
        return not self.kappa_eff > 0

    def require_stable(self):
        if self.unstable:
            raise InstabilityError(
                f"effective cavity decay rate {self.kappa_eff:.6g} rad/s is not positive")
        return self


@dataclass(frozen=True)
class WorkingPoint:
    """Linearisation point: mean intracavity photon number and detuning (rad/s)."""

    n_s: float
    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.n_s) and self.n_s >= 0):
            raise ConfigError(f"n_s must be >= 0, got {self.n_s!r}")
        if not math.isfinite(self.delta):
            raise ConfigError("working-point detuning must be finite")

    @property
    def alpha_s(self) -> float:
        return math.sqrt(self.n_s)

    def coupling(self, params: PhysicalParams) -> float:
        """Many-photon coupling ``G = g0 sqrt(2 n_s)``."""
        return params.g0 * math.sqrt(2.0 * self.n_s)

    @classmethod
    def from_coupling(cls, params: PhysicalParams, G: float, delta: float) -> "WorkingPoint":
        if G < 0:
            raise ConfigError("coupling G must be >= 0")
        if G > 0 and params.g0 == 0:
            raise ConfigError("a nonzero G needs a nonzero single-photon coupling g0")
        if G == 0:
            return cls(n_s=0.0, delta=delta)
        return cls(n_s=0.5 * (G / params.g0) ** 2, delta=delta)
