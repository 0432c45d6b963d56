"""Time-domain stochastic simulation of the linearised in-loop dynamics.

The deterministic part is propagated with the exact matrix exponential and
the noise with its exact step covariance (Van Loan), so without loop delay the
sampled process has exactly the continuous-time statistics at every step.
With a delay ``k dt`` the filter output is read from a ring buffer and held
linearly across each step.

This module is the independent cross-check of :mod:`inloop_optomech.spectra`:
it never evaluates a susceptibility.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
from scipy import linalg, signal

from .linear import LinearSystem, StabilityResult, dynamical_stability, stationary_covariance
from .model import (
    ConfigError,
    FeedbackFilter,
    InstabilityError,
    OptomechError,
    PhysicalParams,
    WorkingPoint,
)
from .spectra import SpectrumGrid

__all__ = [
    "SimConfig",
    "SimResult",
    "DivergenceError",
    "run_simulation",
    "estimate_psd",
    "dynamical_stability",
    "StabilityResult",
    "linear_response_psd",
    "default_dt",
    "bin_average",
    "OracleComparison",
    "compare_with_exact",
]

CHUNK = 1 << 15
DIVERGENCE_FACTOR = 1e6


class DivergenceError(InstabilityError):
    """The simulated trajectory blew up."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.

    ``noise_scales`` multiplies the intensity of each noise channel (see
    :data:`inloop_optomech.linear.CHANNELS`); zeros switch channels off.
    """

    dt: float
    duration: float
    seed: int = 0
    record_decimation: int = 1
    noise_scales: Optional[Sequence[float]] = None
    burn_in: Optional[float] = None

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be > 0")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ConfigError("duration must be > 0")
        if int(self.record_decimation) != self.record_decimation or self.record_decimation < 1:
            raise ConfigError("record_decimation must be a positive integer")

    def validate(self, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint) -> int:
        """Check the step size against all system rates; return the delay in steps."""
        rates = [params.kappa, params.omega_m, abs(wp.delta)] + [abs(p) for p in filt.poles]
        if self.dt * max(rates) > 0.1 * (1 + 1e-12):
            raise ConfigError(f"dt = {self.dt!r} s is too large: dt * max rate = "
                              f"{self.dt * max(rates):.3g} > 0.1")
        if filt.delay == 0:
            return 0
        k = int(round(filt.delay / self.dt))
        if k < 1 or abs(k * self.dt - filt.delay) > 0.01 * filt.delay:
            raise ConfigError(f"dt must divide the loop delay {filt.delay!r} s to within 1%")
        if not filt.strictly_proper:
            raise ConfigError("a delayed loop needs a strictly proper filter in the simulator")
        return k


@dataclass
class SimResult:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    dt_record: float
    config: SimConfig = field(repr=False, default=None)

    @property
    def fs(self) -> float:
        return 1.0 / self.dt_record

    def to_csv(self, path):
        data = np.column_stack([self.t, self.q, self.p, self.x, self.y, self.u])
        np.savetxt(path, data, delimiter=",", header="t,q,p,re_a,im_a,photocurrent",
                   comments="", fmt="%.17g")

    def to_npz(self, path):
        np.savez(path, t=self.t, q=self.q, p=self.p, re_a=self.x, im_a=self.y,
                 photocurrent=self.u)


def _psd_sqrt(cov):
    """Symmetric square root of a covariance matrix, clipping round-off negatives."""
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if np.min(w) < -1e-8 * scale:
        raise OptomechError("step noise covariance is not positive semidefinite")
    return v * np.sqrt(np.clip(w, 0, None))


def _discretise(M, Nw, dt):
    """Exact step matrices: ``Phi``, input integral ``Gam`` and noise covariance ``Q``."""
    d, m = Nw.shape
    vl = np.zeros((2 * d, 2 * d))
    vl[:d, :d] = -M
    vl[:d, d:] = Nw @ Nw.T
    vl[d:, d:] = M.T
    E = linalg.expm(vl * dt)
    phi = E[d:, d:].T
    Q = phi @ E[:d, d:]
    aug = np.zeros((d + m, d + m))
    aug[:d, :d] = M
    aug[:d, d:] = Nw
    gam = linalg.expm(aug * dt)[:d, d:]
    return phi, gam, Q


def _hold_matrices(M, b, dt):
    """Zeroth- and first-order hold integrals of a scalar input through ``b``."""
    d = M.shape[0]
    F = np.zeros((d + 2, d + 2))
    F[:d, :d] = M
    F[:d, d] = b
    F[d, d + 1] = 1.0 / dt
    E = linalg.expm(F * dt)
    return E[:d, d].copy(), E[:d, d + 1].copy()


@numba.njit(cache=True)
def _kernel(state, phi, gam_dt, rmat, z, ux, un, g0, g1, wx, wbuf, pos, kdel, dec, phase,
            out, nrec, limit):
    """Advance ``len(z)`` steps in place; returns (records written, divergence step or -1)."""
    d = state.shape[0]
    m = gam_dt.shape[1]
    nbuf = wbuf.shape[0]
    new = np.empty(d)
    nsteps = z.shape[0]
    for n in range(nsteps):
        if phase == 0 and nrec < out.shape[0]:
            u = 0.0
            for i in range(d):
                u += ux[i] * state[i]
            for j in range(m):
                u += un[j] * z[n, j]
            out[nrec, 0] = state[0]
            out[nrec, 1] = state[1]
            out[nrec, 2] = state[2]
            out[nrec, 3] = state[3]
            out[nrec, 4] = u
            nrec += 1
        phase += 1
        if phase == dec:
            phase = 0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += phi[i, j] * state[j]
            for j in range(m):
                acc += gam_dt[i, j] * z[n, j]
            for j in range(d):
                acc += rmat[i, j] * z[n, m + j]
            new[i] = acc
        if kdel > 0:
            # w_{n-k} and w_{n-k+1} from the ring buffer (pos points at w_n)
            w_old = wbuf[(pos - kdel) % nbuf]
            w_new = wbuf[(pos - kdel + 1) % nbuf]
            for i in range(d):
                new[i] += g0[i] * w_old + g1[i] * (w_new - w_old)
        for i in range(d):
            state[i] = new[i]
        if kdel > 0:
            pos = (pos + 1) % nbuf
            w = 0.0
            for i in range(d):
                w += wx[i] * state[i]
            wbuf[pos] = w
        for i in range(4):
            if not abs(state[i]) <= limit[i]:
                return nrec, n, pos, phase
    return nrec, -1, pos, phase


def _reference_rms(params: PhysicalParams, noise_scales):
    """Stationary RMS of (q, p, x, y) for the uncoupled, loop-free system."""
    bare_wp = WorkingPoint(n_s=0.0, delta=params.delta0 if params.delta0 != 0 else params.kappa)
    ls = LinearSystem.build(params, FeedbackFilter(gain=0.0), bare_wp, noise_scales)
    Nw = ls.n0 * np.sqrt(ls.intensities)[None, :]
    cov = stationary_covariance(ls.m0, Nw)
    rms = np.sqrt(np.clip(np.diag(cov)[:4], 0, None))
    floor = math.sqrt(max(params.n_th, 0.0) + 0.5)
    return np.where(rms > 0, rms, floor)


def run_simulation(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                   config: SimConfig, initial_state: Optional[Sequence[float]] = None) -> SimResult:
    """Integrate the linear Langevin equations with the explicit feedback loop.

    Without ``initial_state`` a loop without delay starts from a draw of the
    exact stationary distribution; a delayed loop starts at rest and discards
    ``config.burn_in`` seconds (default: 20 slowest relaxation times).

    Returns
    -------
    SimResult
        Decimated ``q``, ``p``, ``Re a``, ``Im a`` and the in-loop detection
        signal (its white-noise part averaged over one step).

    Raises
    ------
    DivergenceError
        if ``|q|`` or ``|a|`` exceed ``1e6`` times their uncoupled stationary RMS.
    """
    kdel = config.validate(params, filt, wp)
    ls = LinearSystem.build(params, filt, wp, config.noise_scales)
    st = dynamical_stability(params, filt, wp)
    if not st.stable:
        warnings.warn(f"simulating an unstable configuration (growth rate "
                      f"{st.leading_rate:.4g} rad/s)", RuntimeWarning, stacklevel=2)
    dt = config.dt
    sq = np.sqrt(ls.intensities)
    active = sq > 0
    if kdel == 0:
        M, N = ls.undelayed()
    else:
        M, N = ls.m0, ls.n0
    Nw = (N * sq[None, :])[:, active]
    un_w = (ls.un * sq)[active]
    d, m = Nw.shape
    phi, gam, Q = _discretise(M, Nw, dt)
    rmat = _psd_sqrt(Q - gam @ gam.T / dt)
    gam_dt = gam / math.sqrt(dt)
    ux = ls.ux.copy()
    un_w = un_w / math.sqrt(dt)
    if kdel == 0:
        g0 = np.zeros(d)
        g1 = np.zeros(d)
    else:
        g0, g1 = _hold_matrices(M, ls.bw, dt)

    rng = np.random.default_rng(config.seed)
    if initial_state is not None:
        state = np.zeros(d)
        init = np.asarray(initial_state, dtype=float)
        state[:init.size] = init
        burn = 0.0 if config.burn_in is None else config.burn_in
    elif kdel == 0:
        cov = stationary_covariance(M, Nw) if st.stable else np.zeros((d, d))
        state = _psd_sqrt(cov) @ rng.standard_normal(d)
        burn = 0.0 if config.burn_in is None else config.burn_in
    else:
        state = np.zeros(d)
        burn = (20.0 / abs(st.leading_rate) if config.burn_in is None else config.burn_in)

    limit = DIVERGENCE_FACTOR * _reference_rms(params, config.noise_scales)
    dec = int(config.record_decimation)
    n_burn = int(math.ceil(burn / dt))
    n_steps = int(round(config.duration / dt))
    n_rec = (n_steps + dec - 1) // dec
    out = np.empty((n_rec, 5))
    dummy = np.empty((0, 5))
    wbuf = np.zeros(kdel + 1)
    pos = 0
    phase = 0
    if kdel:
        wbuf[0] = float(ls.wx @ state)

    def advance(count, target, nrec):
        nonlocal pos, phase
        done = 0
        while done < count:
            c = min(CHUNK, count - done)
            z = rng.standard_normal((c, m + d))
            nrec, bad, pos, phase = _kernel(state, phi, gam_dt, rmat, z, ux, un_w, g0, g1,
                                            ls.wx, wbuf, pos, kdel, dec, phase, target, nrec,
                                            limit)
            if bad >= 0:
                return nrec, (done + bad + 1) * dt
            done += c
        return nrec, None

    _, blow = advance(n_burn, dummy, 0)
    if blow is None:
        phase = 0
        written, blow = advance(n_steps, out, 0)
        if blow is not None:
            blow += n_burn * dt
    if blow is not None:
        raise DivergenceError(f"trajectory diverged at t = {blow:.6g} s", blow)
    t = np.arange(n_rec) * dt * dec
    return SimResult(t=t, q=out[:, 0].copy(), p=out[:, 1].copy(), x=out[:, 2].copy(),
                     y=out[:, 3].copy(), u=out[:, 4].copy(), dt_record=dt * dec, config=config)


def default_dt(params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
               fraction: float = 0.1) -> float:
    """Largest step allowed by the step-size rule (``fraction`` of the fastest rate)."""
    rates = [params.kappa, params.omega_m, abs(wp.delta)] + [abs(p) for p in filt.poles]
    dt = fraction / max(rates)
    if filt.delay > 0:
        k = max(1, int(math.ceil(filt.delay / dt)))
        dt = filt.delay / k
    return dt


def estimate_psd(x, fs: float, segment_length: int, overlap: float = 0.0, window: str = "hann",
                 bin_edges_hz: Optional[Sequence[float]] = None, min_segments: int = 8) -> SpectrumGrid:
    """Averaged-periodogram PSD with per-bin standard errors.

    The estimate is two-sided in angular frequency (``int S d omega / 2 pi``
    is the variance), matching :mod:`inloop_optomech.spectra`.  With
    ``bin_edges_hz`` the periodogram of every segment is averaged over each
    bin before the segment statistics are taken, so the error bars include
    correlations between neighbouring frequencies.

    Raises
    ------
    ConfigError
        if fewer than ``min_segments`` segments fit into the data.
    """
    x = np.asarray(x, dtype=float)
    nperseg = int(segment_length)
    noverlap = int(round(overlap * nperseg))
    step = nperseg - noverlap
    nseg = 0 if x.size < nperseg else 1 + (x.size - nperseg) // step
    if nseg < min_segments:
        raise ConfigError(f"only {nseg} segments of {nperseg} samples; need >= {min_segments}")
    f, _, P = signal.spectrogram(x, fs=fs, window=window, nperseg=nperseg, noverlap=noverlap,
                                 detrend="constant", scaling="density", mode="psd")
    # one-sided per Hz -> two-sided in omega with the d omega / 2 pi measure
    S = 0.5 * P
    if bin_edges_hz is not None:
        edges = np.asarray(bin_edges_hz, dtype=float)
        idx = np.digitize(f, edges) - 1
        keep = [(i, np.flatnonzero(idx == i)) for i in range(len(edges) - 1)]
        keep = [(i, sel) for i, sel in keep if sel.size]
        S = np.stack([S[sel].mean(axis=0) for _, sel in keep])
        f = np.array([f[sel].mean() for _, sel in keep])
    else:
        # DC and (for even segments) Nyquist are not doubled in a one-sided density
        stop = -1 if nperseg % 2 == 0 else None
        S, f = S[1:stop], f[1:stop]
    mean = S.mean(axis=1)
    err = S.std(axis=1, ddof=1) / math.sqrt(S.shape[1])
    omega = 2 * math.pi * f
    nan = np.full_like(mean, np.nan)
    return SpectrumGrid(omega=omega, s_thermal=nan, s_rp=nan, s_fb=nan, chi2=nan,
                        s_total=mean, mode="simulated", s_err=err,
                        metadata={"segments": int(S.shape[1]), "segment_length": nperseg,
                                  "fs_hz": fs})


def bin_average(omega_bins_hz, f_native_hz, values):
    """Average ``values`` sampled at ``f_native_hz`` over the given bin edges."""
    idx = np.digitize(f_native_hz, omega_bins_hz) - 1
    out = []
    for i in range(len(omega_bins_hz) - 1):
        sel = idx == i
        if np.any(sel):
            out.append(values[sel].mean())
    return np.array(out)


def linear_response_psd(omega, params: PhysicalParams, filt: FeedbackFilter, wp: WorkingPoint,
                        component: str = "q", noise_scales=None):
    """Brute-force PSD of one state component from the real state-space model.

    This inverts the full drift at each frequency and sums the noise channels;
    it shares no code with the susceptibility formulas.
    """
    index = {"q": 0, "p": 1, "x": 2, "y": 3}[component]
    return LinearSystem.build(params, filt, wp, noise_scales).psd(omega, index)


@dataclass
class OracleComparison:
    """Binned simulated PSD against the analytic spectrum averaged over the same bins."""

    estimate: SpectrumGrid
    reference: np.ndarray
    z: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def compare_with_exact(result: SimResult, params: PhysicalParams, filt: FeedbackFilter,
                       wp: WorkingPoint, segment_s: float, edges_hz) -> OracleComparison:
    """Bin the simulated ``q`` spectrum and the exact ``S_qq`` on identical native frequencies."""
    from .spectra import s_qq_exact

    fs = result.fs
    nper = int(round(segment_s * fs))
    est = estimate_psd(result.q, fs, nper, bin_edges_hz=edges_hz)
    fn = np.fft.rfftfreq(nper, 1.0 / fs)
    sel = (fn >= edges_hz[0]) & (fn < edges_hz[-1])
    exact = s_qq_exact(2 * math.pi * fn[sel], params, filt, wp).s_total
    ref = bin_average(np.asarray(edges_hz), fn[sel], exact)
    return OracleComparison(estimate=est, reference=ref, z=(est.s_total - ref) / est.s_err)
