"""Parameter sweeps over detuning, feedback gain and seed transmission.

Every sweep evaluates its grid points independently (optionally on a thread
pool), keeps results in grid order and records per-point failures instead of
aborting.  Outputs are a long-format CSV (one row per grid point and
frequency) and a compact JSON summary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .config import Scenario
from .model import ConfigError, OptomechError, rad_to_hz
from .omit import dip_width, transmission_spectrum
from .spectra import (
    ResolutionError,
    SpectrumGrid,
    find_normal_modes,
    fmt,
    make_grid,
    normal_mode_frequencies,
    s_qq,
)

__all__ = [
    "PointFailure",
    "SweepResult",
    "sweep_detuning",
    "sweep_gain",
    "omit_gain_sweep",
    "run_points",
    "check_grid",
]


@dataclass(frozen=True)
class PointFailure:
    index: int
    value: float
    error: str
    message: str


@dataclass
class SweepResult:
    """Rows of a sweep plus per-point scalar traces.

    ``rows[i]`` is a dict of equal-length arrays (always including
    ``omega_hz``) or ``None`` for a failed point.
    """

    axis_name: str
    axis: np.ndarray
    rows: List[Optional[dict]]
    traces: dict
    failures: List[PointFailure] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write_csv(self, path):
        cols = None
        for r in self.rows:
            if r is not None:
                cols = list(r)
                break
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([self.axis_name] + (cols or ["omega_hz"]))
            for value, r in zip(self.axis, self.rows):
                if r is None:
                    continue
                for vals in zip(*(r[c] for c in cols)):
                    wr.writerow([fmt(value)] + [fmt(v) for v in vals])

    def summary_dict(self) -> dict:
        out = {
            "axis": self.axis_name,
            "values": [float(v) for v in self.axis],
            "traces": {k: [None if v is None or not np.isfinite(v) else float(v) for v in vals]
                       for k, vals in self.traces.items()},
            "failures": [f.__dict__ for f in self.failures],
            "n_failures": len(self.failures),
        }
        out.update(self.summary)
        return out

    def write_summary(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def check_grid(values: Sequence[float]) -> np.ndarray:
    """Validate a sweep axis: nonempty, finite and strictly monotone."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ConfigError("sweep grid must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(v)):
        raise ConfigError("sweep grid must be finite")
    d = np.diff(v)
    if v.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise ConfigError("sweep grid must be strictly monotone")
    return v


def run_points(fn: Callable, values: Sequence[float], executor=None):
    """Evaluate ``fn`` at every value, in order, catching model errors per point."""
    def safe(item):
        i, v = item
        try:
            return fn(v), None
        except (OptomechError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return None, PointFailure(i, float(v), type(exc).__name__, str(exc))

    items = list(enumerate(values))
    res = list(executor.map(safe, items)) if executor is not None else [safe(x) for x in items]
    return [r for r, _ in res], [f for _, f in res if f is not None]


def _spectrum_row(spec: SpectrumGrid) -> dict:
    th, rp, fb = spec.contributions()
    return {"omega_hz": spec.omega_hz, "s_total": 2 * spec.s_total, "s_th": 2 * th,
            "s_rp": 2 * rp, "s_fb": 2 * fb}


def _grid_opts(sc: Scenario) -> dict:
    g = sc.section("grid")
    opts = {"n_linear": int(g.get("n_linear", 4001)), "n_cluster": int(g.get("n_cluster", 200))}
    if "span_hz" in g:
        opts["span"] = 2 * math.pi * float(g["span_hz"])
    return opts


def _peaks(spec: SpectrumGrid):
    try:
        nm = find_normal_modes(spec)
    except ResolutionError:
        return None
    return nm


def sweep_detuning(sc: Scenario, ratios: Sequence[float], executor=None,
                   mode=None) -> SweepResult:
    """Spectra and hybrid-mode traces versus effective detuning ``delta_eff / omega_m``.

    The coupling ``G``, the loop phase and the normalised gain are held fixed
    and the loop is recalibrated at each detuning, so ``kappa_eff`` is
    constant and ``delta_eff - delta`` is a fixed offset.
    """
    ratios = check_grid(ratios)
    p = sc.params
    offset = sc.wp.delta - sc.effective().delta_eff
    mode = mode or sc.mode

    def point(r):
        scn = sc.with_detuning(r * p.omega_m + offset)
        cav = scn.cavity(mode=mode)
        grid = make_grid(p, cav.eff, cav.G, **_grid_opts(sc))
        spec = s_qq(grid, p, scn.filter, scn.wp, mode=mode)
        lo, hi = normal_mode_frequencies(p, cav.eff, cav.G)
        return _spectrum_row(spec), cav.eff, lo, hi, _peaks(spec)

    res, failures = run_points(point, ratios, executor)
    nan = float("nan")
    traces = {
        "delta_eff_hz": [rad_to_hz(r[1].delta_eff) if r else nan for r in res],
        "kappa_eff_hz": [rad_to_hz(r[1].kappa_eff) if r else nan for r in res],
        "omega_minus_hz": [rad_to_hz(r[2]) if r else nan for r in res],
        "omega_plus_hz": [rad_to_hz(r[3]) if r else nan for r in res],
        "peak_minus_hz": [rad_to_hz(r[4].omega_minus) if r and r[4] else nan for r in res],
        "peak_plus_hz": [rad_to_hz(r[4].omega_plus) if r and r[4] else nan for r in res],
    }
    gap = np.array(traces["omega_plus_hz"]) - np.array(traces["omega_minus_hz"])
    traces["gap_hz"] = list(gap)
    summary = {"coupling_hz": rad_to_hz(sc.G), "g_fb": sc.gain}
    if np.any(np.isfinite(gap)):
        i = int(np.nanargmin(gap))
        summary.update(min_gap_hz=float(gap[i]), min_gap_ratio=float(ratios[i]),
                       min_gap_delta_eff_hz=float(traces["delta_eff_hz"][i]))
    return SweepResult("delta_eff_over_omega_m", ratios, [r[0] if r else None for r in res],
                       traces, failures, summary)


def _double_peaked(sc: Scenario, g: float, mode):
    cav = sc.cavity(g, mode=mode)
    grid = make_grid(sc.params, cav.eff, cav.G, **_grid_opts(sc))
    spec = s_qq(grid, sc.params, cav.filter, sc.wp, mode=mode)
    nm = find_normal_modes(spec)
    return spec, nm, cav


def sweep_gain(sc: Scenario, gains: Sequence[float], executor=None, mode=None,
               refine_tol: float = 1e-4) -> SweepResult:
    """Spectra versus normalised gain with weak-to-strong transition diagnostics.

    The first single-to-double-peak change along the grid is refined by
    bisection to ``refine_tol`` in normalised gain; ``G / kappa_eff`` there is
    reported as the transition ratio.
    """
    gains = check_grid(gains)
    mode = mode or sc.mode

    def point(g):
        spec, nm, cav = _double_peaked(sc, float(g), mode)
        return _spectrum_row(spec), nm, cav.eff, cav.normalized_gain

    res, failures = run_points(point, gains, executor)
    nan = float("nan")
    traces = {
        "g_fb_reported": [r[3] if r else nan for r in res],
        "kappa_eff_hz": [rad_to_hz(r[2].kappa_eff) if r else nan for r in res],
        "delta_eff_hz": [rad_to_hz(r[2].delta_eff) if r else nan for r in res],
        "g_over_kappa_eff": [sc.G / r[2].kappa_eff if r else nan for r in res],
        "double_peaked": [float(not r[1].single_peaked) if r else nan for r in res],
        "splitting_hz": [rad_to_hz(r[1].splitting) if r else nan for r in res],
    }
    summary = {"coupling_hz": rad_to_hz(sc.G)}
    ok = [i for i, r in enumerate(res) if r is not None]
    if ok:
        last = res[ok[-1]]
        summary["max_gain"] = float(gains[ok[-1]])
        summary["max_gain_splitting_hz"] = rad_to_hz(last[1].splitting)
        summary["max_gain_implied_coupling_hz"] = rad_to_hz(last[1].splitting) / math.sqrt(2)
    trans = None
    for a, b in zip(ok[:-1], ok[1:]):
        if res[a][1].single_peaked and not res[b][1].single_peaked:
            trans = (float(gains[a]), float(gains[b]))
            break
    if trans is not None:
        lo, hi = trans
        while hi - lo > refine_tol:
            mid = 0.5 * (lo + hi)
            if _double_peaked(sc, mid, mode)[1].single_peaked:
                lo = mid
            else:
                hi = mid
        eff = sc.effective(hi)
        summary.update(transition_gain=hi, transition_g_over_kappa_eff=sc.G / eff.kappa_eff,
                       transition_kappa_eff_hz=rad_to_hz(eff.kappa_eff))
    return SweepResult("g_fb", gains, [r[0] if r else None for r in res], traces, failures,
                       summary)


def omit_gain_sweep(sc: Scenario, gains: Sequence[float], executor=None, mode=None,
                    span: Optional[float] = None, n_points: int = 8001) -> SweepResult:
    """Seed transmission versus normalised gain.

    The grid covers ``omega_m +- span`` (default three bare cavity linewidths)
    with extra points around the transparency dip.
    """
    gains = check_grid(gains)
    mode = mode or sc.mode
    p = sc.params
    span = 3 * p.kappa if span is None else span

    def point(g):
        cav = sc.cavity(float(g), mode=mode)
        lin = np.linspace(p.omega_m - span, p.omega_m + span, n_points)
        dense = p.omega_m + np.linspace(-5, 5, 2001) * max(cav.G ** 2 / cav.eff.kappa_eff,
                                                           p.gamma_m)
        grid = np.unique(np.concatenate([lin, dense]))
        ts = transmission_spectrum(grid, cav)
        row = {"omega_hz": rad_to_hz(ts.omega), "t_re": ts.t.real, "t_im": ts.t.imag,
               "s_t": ts.s_t, "phase": ts.phase, "epsilon": ts.epsilon, "q": ts.q,
               "rho": ts.rho}
        near = np.abs(ts.omega - p.omega_m) <= cav.eff.kappa_eff
        i = np.flatnonzero(near)[np.argmin(ts.s_t[near])]
        return row, cav.eff, dip_width(ts, cav), float(ts.omega[i])

    res, failures = run_points(point, gains, executor)
    nan = float("nan")
    traces = {
        "kappa_eff_hz": [rad_to_hz(r[1].kappa_eff) if r else nan for r in res],
        "dip_width_hz": [rad_to_hz(r[2]) if r else nan for r in res],
        "dip_omega_hz": [rad_to_hz(r[3]) if r else nan for r in res],
    }
    return SweepResult("g_fb", gains, [r[0] if r else None for r in res], traces, failures,
                       {"coupling_hz": rad_to_hz(sc.G)})
