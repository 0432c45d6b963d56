"""Seed transmission through the in-loop cavity and its Fano parametrisation.

A weak seed injected through the input port is transmitted to the monitor
port.  Mechanical sidebands generated by the pump interfere with it and open
a transparency window at ``omega_m`` whose shape follows a Fano profile set by
the in-loop cavity response.  Outputs are seed-normalised transmission
coefficients.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import SingularityError
from .response import InLoopCavity
from .spectra import fmt

__all__ = [
    "transmission",
    "fano_params",
    "fano_reconstruction",
    "OmitSpectrum",
    "transmission_spectrum",
    "dip_width",
]


def _pieces(omega, cav: InLoopCavity):
    p = cav.params
    w = np.asarray(omega, dtype=float)
    chi = np.asarray(cav.chi_c_eff(w), dtype=complex)
    num = p.omega_m ** 2 - w ** 2 - 1j * w * p.gamma_m
    den = num - 1j * p.omega_m * cav.G ** 2 * chi
    return w, chi, num, den


def _prefactor(cav: InLoopCavity) -> float:
    p = cav.params
    return 8 * p.kappa0 * p.kappa_prime ** 2


def transmission(omega, cav: InLoopCavity):
    """Complex transmission coefficient ``t(omega)`` (dimensionless).

    Raises
    ------
    InstabilityError
        propagated from the in-loop cavity response.
    """
    p = cav.params
    w, chi, num, den = _pieces(omega, cav)
    t = (2 * p.kappa_prime * math.sqrt(2 * p.kappa0) * np.exp(-1j * cav.theta)
         * chi * num / den)
    return t if t.ndim else complex(t)


def fano_params(omega, cav: InLoopCavity):
    """Fano asymmetry parameters ``(epsilon, q, rho)`` at ``omega``.

    Raises
    ------
    SingularityError
        where the common denominator ``gamma_m omega + omega_m G^2 Re chi``
        vanishes; the message gives the first offending frequency.
    """
    p = cav.params
    w, chi, num, den = _pieces(omega, cav)
    w1 = np.atleast_1d(w)
    chi1 = np.atleast_1d(chi)
    coupling = p.omega_m * cav.G ** 2
    denom = p.gamma_m * w1 + coupling * chi1.real
    bad = ~(np.abs(denom) > 0)
    if np.any(bad):
        raise SingularityError(f"Fano denominator vanishes at omega = "
                               f"{float(w1[np.argmax(bad)])!r} rad/s")
    eps = (w1 ** 2 - p.omega_m ** 2 - coupling * chi1.imag) / denom
    q = coupling * chi1.imag / denom
    rho = (p.gamma_m * w1) ** 2 / np.abs(np.atleast_1d(den)) ** 2
    if w.ndim == 0:
        return float(eps[0]), float(q[0]), float(rho[0])
    return eps, q, rho


def fano_reconstruction(omega, cav: InLoopCavity):
    """``|t|^2`` rebuilt from the Fano form, for consistency checks."""
    eps, q, rho = fano_params(omega, cav)
    chi = cav.chi_c_eff(np.asarray(omega, dtype=float))
    return _prefactor(cav) * np.abs(chi) ** 2 * ((eps + q) ** 2 / (eps ** 2 + 1) + rho)


@dataclass
class OmitSpectrum:
    """Transmission on a frequency grid.

    ``phase`` is ``arg t`` unwrapped so that it is continuous from the
    low-frequency end of the grid, starting on the principal branch.
    """

    omega: np.ndarray
    t: np.ndarray
    epsilon: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def s_t(self) -> np.ndarray:
        return np.abs(self.t) ** 2

    @property
    def phase(self) -> np.ndarray:
        return np.unwrap(np.angle(self.t))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            for k, v in self.metadata.items():
                fh.write(f"# {k} = {v}\n")
            wr = csv.writer(fh)
            wr.writerow(["omega_hz", "t_re", "t_im", "s_t", "epsilon", "q", "rho"])
            for row in zip(self.omega / (2 * math.pi), self.t.real, self.t.imag, self.s_t,
                           self.epsilon, self.q, self.rho):
                wr.writerow([fmt(v) for v in row])


def transmission_spectrum(omega, cav: InLoopCavity, metadata=None) -> OmitSpectrum:
    """Transmission, power transmission and Fano parameters on ``omega`` (rad/s)."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    eps, q, rho = fano_params(w, cav)
    return OmitSpectrum(omega=w, t=np.atleast_1d(transmission(w, cav)), epsilon=eps, q=q,
                        rho=rho, metadata=dict(metadata or {}))


def dip_width(spec: OmitSpectrum, cav: InLoopCavity, window: float = None) -> float:
    """Full width (rad/s) of the transparency dip at half depth.

    The dip is measured on ``|t|^2`` divided by the bare effective-cavity line,
    i.e. on ``(eps + q)^2 / (eps^2 + 1) + rho``, which tends to one away from
    ``omega_m``.  The minimum is searched within ``window`` of ``omega_m``
    (default ``kappa_eff``).  Returns ``nan`` if a half-depth edge falls off
    the grid.
    """
    p = cav.params
    ratio = (spec.epsilon + spec.q) ** 2 / (spec.epsilon ** 2 + 1) + spec.rho
    window = cav.eff.kappa_eff if window is None else window
    near = np.flatnonzero(np.abs(spec.omega - p.omega_m) <= window)
    if near.size == 0:
        return float("nan")
    i0 = near[np.argmin(ratio[near])]
    level = 0.5 * (1.0 + ratio[i0])

    def edge(step):
        i = i0
        while 0 <= i + step < ratio.size:
            j = i + step
            if ratio[j] >= level:
                x0, x1 = spec.omega[i], spec.omega[j]
                y0, y1 = ratio[i], ratio[j]
                return x0 + (level - y0) * (x1 - x0) / (y1 - y0)
            i = j
        return float("nan")

    return float(edge(1) - edge(-1))
