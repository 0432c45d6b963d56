"""Real state-space form of the linearised fluctuation dynamics.

State ordering is ``[q, p, x, y, filter states...]`` with ``x + i y`` the
cavity fluctuation.  White-noise inputs, in :data:`CHANNELS` order, are the
thermal force and the quadratures of the four optical vacuum channels (only
the amplitude quadrature of the detector vacuum reaches the loop).  In the
symmetrised classical picture each optical quadrature has intensity 1/4, so a
complex channel has ``<a(t) a*(t')> = delta(t - t') / 2``.

The feedback output ``w = K [C zeta + D u]`` (``K`` the loop prefactor, ``u``
the in-loop detection signal) drives the cavity through ``exp(-i theta) w``.
With a loop delay the output is applied ``delay`` seconds late.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy import signal

from .model import FeedbackFilter, PhysicalParams, WorkingPoint
from .response import loop_prefactor, theta_delta

CHANNELS = ("xi", "ain_re", "ain_im", "ap_re", "ap_im", "app_re", "app_im", "c_re")
STATE_LABELS = ("q", "p", "x", "y")


def pade_delay(delay: float, order: int = 3):
    """State-space ``(A, B, C, D)`` of the ``[order/order]`` Pade approximant of ``exp(-s delay)``."""
    if order < 1:
        raise ValueError("Pade order must be >= 1")
    coef = [factorial(2 * order - k) * factorial(order)
            / (factorial(2 * order) * factorial(k) * factorial(order - k)) for k in range(order + 1)]
    den = np.array([c * delay ** k for k, c in enumerate(coef)])[::-1]
    num = np.array([c * (-delay) ** k for k, c in enumerate(coef)])[::-1]
    A, B, C, D = signal.tf2ss(num, den)
    return A, B, C, D


@dataclass
class LinearSystem:
    """Matrices of the linear Langevin system for one working point.

    ``m0`` and ``n0`` exclude the feedback output; ``bw`` injects it,
    ``wx`` and ``wn`` read it from state and noise.  ``intensities`` are the
    white-noise intensities of :data:`CHANNELS`.
    """

    m0: np.ndarray
    n0: np.ndarray
    bw: np.ndarray
    wx: np.ndarray
    wn: np.ndarray
    intensities: np.ndarray
    delay: float
    n_filter: int
    ux: np.ndarray
    un: np.ndarray

    @classmethod
    def build(cls, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
              noise_scales=None) -> "LinearSystem":
        Af, Bf, Cf, Df = filt.state_space()
        nf = Af.shape[0]
        dim = 4 + nf
        G = wp.coupling(params)
        K = loop_prefactor(params, wp.n_s)
        th = theta_delta(params.kappa, wp.delta)
        ct, st = math.cos(th), math.sin(th)
        kap, dl = params.kappa, wp.delta
        s0, sp, spp = (math.sqrt(2 * params.kappa0), math.sqrt(2 * params.kappa_prime),
                       math.sqrt(2 * params.kappa_dprime))
        nch = len(CHANNELS)

        m0 = np.zeros((dim, dim))
        m0[0, 1] = params.omega_m
        m0[1, 0], m0[1, 1], m0[1, 2] = -params.omega_m, -params.gamma_m, 2 * G
        m0[2, 2], m0[2, 3] = -kap, dl
        m0[3, 0], m0[3, 2], m0[3, 3] = G, -dl, -kap

        n0 = np.zeros((dim, nch))
        n0[1, 0] = 1.0
        n0[2, 1], n0[2, 2], n0[2, 3], n0[2, 5] = s0 * ct, s0 * st, sp, spp
        n0[3, 1], n0[3, 2], n0[3, 4], n0[3, 6] = -s0 * st, s0 * ct, sp, spp

        # in-loop detection signal u = ux . state + un . noise
        ux = np.zeros(dim)
        ux[2] = 2.0
        un = np.zeros(nch)
        un[3] = -2.0 / sp
        if params.eta < 1:
            un[7] = math.sqrt((1 - params.eta) / params.eta) * 2.0 / sp
        if nf:
            m0[4:, :] += np.outer(Bf[:, 0], ux)
            m0[4:, 4:] += Af
            n0[4:, :] += np.outer(Bf[:, 0], un)

        cf_ext = np.zeros(dim)
        cf_ext[4:] = Cf[0, :] if nf else []
        wx = K * (cf_ext + Df[0, 0] * ux)
        wn = K * Df[0, 0] * un
        bw = np.zeros(dim)
        bw[2], bw[3] = ct, -st

        inten = np.array([params.gamma_m * (2 * params.n_th + 1)] + [0.25] * (nch - 1))
        if noise_scales is not None:
            inten = inten * np.asarray(noise_scales, dtype=float)
        return cls(m0=m0, n0=n0, bw=bw, wx=wx, wn=wn, intensities=inten,
                   delay=filt.delay, n_filter=nf, ux=ux, un=un)

    @property
    def dim(self) -> int:
        return self.m0.shape[0]

    def undelayed(self):
        """Drift and noise matrices with the loop closed instantaneously."""
        return (self.m0 + np.outer(self.bw, self.wx), self.n0 + np.outer(self.bw, self.wn))

    def drift_with_pade(self, order: int = 3):
        """Drift with the loop delay replaced by a Pade approximant (for eigenvalues)."""
        if self.delay == 0:
            return self.undelayed()[0]
        Ad, Bd, Cd, Dd = pade_delay(self.delay, order)
        nd = Ad.shape[0]
        dim = self.dim
        M = np.zeros((dim + nd, dim + nd))
        # w_out = Cd d + Dd w_in, d' = Ad d + Bd w_in, w_in = wx . state
        M[:dim, :dim] = self.m0 + Dd[0, 0] * np.outer(self.bw, self.wx)
        M[:dim, dim:] = np.outer(self.bw, Cd[0, :])
        M[dim:, :dim] = np.outer(Bd[:, 0], self.wx)
        M[dim:, dim:] = Ad
        return M

    def transfer(self, omega):
        """Noise-to-state transfer ``T(omega)`` with shape ``(len(omega), dim, n_channels)``.

        The loop delay enters exactly as ``exp(i omega delay)``.
        """
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        ph = np.exp(1j * omega * self.delay)[:, None, None]
        eye = np.eye(self.dim)
        lhs = (-1j * omega[:, None, None] * eye - self.m0[None]
               - ph * np.outer(self.bw, self.wx)[None])
        rhs = self.n0[None] + ph * np.outer(self.bw, self.wn)[None]
        return np.linalg.solve(lhs, rhs)

    def psd(self, omega, index: int = 0):
        """Two-sided PSD of one state component, normalised so that int dw/2pi = variance."""
        T = self.transfer(omega)
        return np.einsum("wk,k->w", np.abs(T[:, index, :]) ** 2, self.intensities)


def stationary_covariance(M, B):
    """Solve ``M X + X M^T + B B^T = 0`` in the eigenbasis of ``M``.

    Unlike a Schur-based solver this stays accurate when two eigenvalues
    nearly cancel, as for a high-Q oscillator next to fast optical modes.
    """
    lam, V = np.linalg.eig(M)
    Vi = np.linalg.inv(V)
    C = Vi @ (B @ B.T) @ Vi.conj().T
    X = V @ (C / -(lam[:, None] + lam.conj()[None, :])) @ V.conj().T
    X = np.real(X)
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class StabilityResult:
    stable: bool
    leading_rate: float
    eigenvalues: np.ndarray


def dynamical_stability(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                        pade_order: int = 3) -> StabilityResult:
    """Eigenvalue test of the full linear drift.

    ``leading_rate`` is the largest real part (rad/s); the system is stable
    iff it is negative.  A loop delay is replaced by a Pade approximant.
    """
    M = LinearSystem.build(params, filt, wp).drift_with_pade(pade_order)
    ev = np.linalg.eigvals(M)
    lead = float(np.max(ev.real))
    return StabilityResult(stable=lead < 0, leading_rate=lead, eigenvalues=ev)


def closed_loop_cavity(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                       pade_order: int = 3):
    """Decay rate and frequency ``(kappa, omega)`` of the closed-loop cavity pole.

    The mechanics is decoupled (``G = 0``) and the pole nearest to
    ``wp.delta`` is returned, so this is the exact counterpart of the
    narrow-band ``(kappa_eff, delta_eff)``.
    """
    bare = WorkingPoint(n_s=wp.n_s, delta=wp.delta)
    sysm = LinearSystem.build(params.replace(g0=0.0), filt, bare)
    ev = np.linalg.eigvals(sysm.drift_with_pade(pade_order))
    ev = ev[np.abs(ev.imag) > 0]
    i = int(np.argmin(np.abs(np.abs(ev.imag) - abs(wp.delta))))
    return float(-ev[i].real), float(abs(ev[i].imag))
