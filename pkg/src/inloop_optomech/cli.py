"""Command-line front end.

Every subcommand reads a scenario (``--config`` file or bundled ``--preset``),
writes its data files to ``--out`` and a ``manifest.json`` describing how they
were produced.  Exit codes: 0 success, 1 configuration or usage error,
2 physical instability, 3 numerical failure (including failed checks).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_hash, load_scenario, preset_names
from .model import (
    ConfigError,
    ConvergenceError,
    InstabilityError,
    OptomechError,
    SingularityError,
    rad_to_hz,
)
from .spectra import fmt

EXIT_OK, EXIT_CONFIG, EXIT_INSTABILITY, EXIT_NUMERICAL = 0, 1, 2, 3

SUBCOMMANDS = {
    "spectrum": "displacement spectrum with its thermal, back-action and loop parts",
    "occupancy": "phonon occupancy from the closed form and the spectrum integral",
    "omit": "seed transmission and Fano parameters",
    "simulate": "stochastic time-domain run compared against the exact spectrum",
    "sweep-detuning": "spectra and hybrid modes versus effective detuning",
    "sweep-gain": "spectra and weak-to-strong transition versus feedback gain",
    "cooling-curve": "occupancy relative to plain sideband cooling versus gain",
    "steady-state": "classical working points of the driven cavity",
    "check": "randomised invariant suite",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="inloop-optomech",
                     description="Optomechanics with an in-loop (anti-squashed) cavity field.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        if name != "check":
            src = p.add_mutually_exclusive_group(required=True)
            src.add_argument("--config", metavar="PATH", help="scenario TOML file")
            src.add_argument("--preset", choices=preset_names(), help="bundled scenario")
            p.add_argument("--mode", choices=("exact", "effective"),
                           help="loop description (overrides [run] mode)")
            p.add_argument("--gain", type=float, help="normalised feedback gain G_fb")
        p.add_argument("--out", metavar="DIR", help="output directory (default: .)")
        p.add_argument("--threads", type=int, metavar="N",
                       help="worker threads (default: $OPTOMECH_THREADS or 1)")
        p.add_argument("--seed", type=int, metavar="N", help="random seed")
        p.add_argument("--format", choices=("csv", "json"), help="tabular output format")
        if name == "simulate":
            p.add_argument("--timeseries", choices=("none", "csv", "npz"), default="none",
                           help="also dump the recorded time series")
        if name == "check":
            p.add_argument("--draws", type=int, default=100, help="number of random draws")
    return parser


def _run_settings(args, scenario=None) -> dict:
    run = scenario.section("run") if scenario is not None else {}
    threads = args.threads
    if threads is None:
        env = os.environ.get("OPTOMECH_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise ConfigError(f"OPTOMECH_THREADS must be an integer, got {env!r}") from exc
    if threads is None:
        threads = int(run.get("threads", 1))
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    out = Path(args.out or run.get("out", "."))
    fmt_ = args.format or run.get("format", "csv")
    if fmt_ not in ("csv", "json"):
        raise ConfigError(f"unknown output format {fmt_!r}")
    return {"threads": threads, "out": out, "format": fmt_}


@contextmanager
def _executor(threads: int):
    if threads <= 1:
        yield None
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            yield ex


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write_table(path: Path, rows: list, fmt_: str) -> Path:
    path = path.with_suffix("." + fmt_)
    if fmt_ == "json":
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    else:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            cols = list(rows[0]) if rows else []
            wr.writerow(cols)
            for r in rows:
                wr.writerow([fmt(v) if isinstance(v, (int, float)) and not isinstance(v, bool)
                             else v for v in (r[c] for c in cols)])
    return path


def _write_manifest(out: Path, args, scenario, outputs) -> Path:
    flags = {k: v for k, v in vars(args).items() if k != "command" and v is not None}
    manifest = {
        "tool": "inloop-optomech",
        "version": __version__,
        "subcommand": args.command,
        "flags": flags,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    if scenario is not None:
        manifest.update(config_path=getattr(args, "config", None),
                        preset=getattr(args, "preset", None),
                        config_sha256=config_hash(scenario.raw),
                        resolved_config=scenario.raw)
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _grid(scenario, cav):
    from .spectra import make_grid
    g = scenario.section("grid")
    kw = {"n_linear": int(g.get("n_linear", 4001)), "n_cluster": int(g.get("n_cluster", 200))}
    if "span_hz" in g:
        kw["span"] = 2 * math.pi * float(g["span_hz"])
    return make_grid(scenario.params, cav.eff, cav.G, **kw)


def _gain_grid(scenario):
    sw = scenario.section("sweep")
    hi = sw.get("gain_max", scenario.gain if scenario.gain else 0.95)
    return np.linspace(float(sw.get("gain_min", 0.0)), float(hi), int(sw.get("gain_points", 50)))


# -- subcommands -------------------------------------------------------------

def cmd_spectrum(args, sc, st):
    from .spectra import find_normal_modes, s_qq, s_xx_from_s_qq, write_spectrum_csv
    cav = sc.cavity()
    spec = s_qq(_grid(sc, cav), sc.params, sc.filter, sc.wp, mode=sc.mode)
    if sc.params.mass is not None:
        spec = s_xx_from_s_qq(spec, sc.params)
    nm = find_normal_modes(spec)
    meta = {"scenario": sc.name, "mode": sc.mode.value, "g_fb": sc.gain,
            "kappa_eff_hz": rad_to_hz(cav.eff.kappa_eff),
            "delta_eff_hz": rad_to_hz(cav.eff.delta_eff), "coupling_hz": rad_to_hz(cav.G),
            "double_peaked": not nm.single_peaked, "splitting_hz": rad_to_hz(nm.splitting)}
    if st["format"] == "json":
        path = st["out"] / "spectrum.json"
        th, rp, fb = spec.contributions()
        with open(path, "w") as fh:
            json.dump({"metadata": meta, "omega_hz": spec.omega_hz.tolist(),
                       "s_th": (2 * th).tolist(), "s_rp": (2 * rp).tolist(),
                       "s_fb": (2 * fb).tolist(), "s_total": (2 * spec.s_total).tolist()}, fh)
    else:
        path = st["out"] / "spectrum.csv"
        write_spectrum_csv(path, spec, meta)
    print(f"kappa_eff = {meta['kappa_eff_hz']:.6g} Hz, delta_eff = {meta['delta_eff_hz']:.6g} Hz, "
          f"{'double' if meta['double_peaked'] else 'single'}-peaked, "
          f"splitting = {meta['splitting_hz']:.6g} Hz")
    return [path]


def cmd_occupancy(args, sc, st):
    from .occupancy import phonon_number_closed, phonon_number_integral
    from .spectra import z_delta
    cav = sc.cavity()
    closed = phonon_number_closed(sc.params, cav.eff, cav.G, z_delta(sc.params, cav.eff, sc.wp.delta))
    integ = phonon_number_integral(sc.params, filt=sc.filter, wp=sc.wp, mode=sc.mode)
    rows = []
    for r in (closed, integ):
        row = {"method": r.method, "n_m": r.n_m, "gamma_eff_hz": rad_to_hz(r.gamma_eff),
               "a_plus_hz": rad_to_hz(r.a_plus), "a_minus_hz": rad_to_hz(r.a_minus),
               "n_m_eff": r.n_m_eff, "n_m_th_eff": r.n_m_th_eff, "in_regime": r.in_regime}
        rows.append(row)
    path = _write_table(st["out"] / "occupancy", rows, st["format"])
    print(f"n_m closed form = {closed.n_m:.6g}, integral = {integ.n_m:.6g}"
          f"{'' if closed.in_regime else ' (closed form outside its validity regime)'}")
    return [path]


def cmd_omit(args, sc, st):
    from .omit import dip_width, transmission_spectrum
    gains = sc.section("sweep").get("omit_gains")
    if gains is not None and args.gain is None:
        from .sweeps import omit_gain_sweep
        with _executor(st["threads"]) as ex:
            res = omit_gain_sweep(sc, gains, executor=ex)
        for g, w in zip(res.axis, res.traces["dip_width_hz"]):
            print(f"G_fb = {g:.3f}: transparency dip width = {w:.6g} Hz")
        return _write_sweep(res, st, "omit_sweep")
    cav = sc.cavity()
    p = sc.params
    span = 3 * p.kappa
    grid = np.linspace(p.omega_m - span, p.omega_m + span, int(sc.section("grid").get("n_linear", 8001)))
    ts = transmission_spectrum(grid, cav, {"scenario": sc.name, "g_fb": sc.gain,
                                          "kappa_eff_hz": rad_to_hz(cav.eff.kappa_eff)})
    if st["format"] == "json":
        path = st["out"] / "omit.json"
        with open(path, "w") as fh:
            json.dump({"metadata": ts.metadata, "omega_hz": rad_to_hz(ts.omega).tolist(),
                       "t_re": ts.t.real.tolist(), "t_im": ts.t.imag.tolist(),
                       "s_t": ts.s_t.tolist(), "epsilon": ts.epsilon.tolist(),
                       "q": ts.q.tolist(), "rho": ts.rho.tolist()}, fh)
    else:
        path = st["out"] / "omit.csv"
        ts.write_csv(path)
    print(f"transparency dip width = {rad_to_hz(dip_width(ts, cav)):.6g} Hz")
    return [path]


def cmd_simulate(args, sc, st):
    from .simulate import SimConfig, compare_with_exact, default_dt, run_simulation
    from .spectra import write_spectrum_csv
    sim = sc.section("simulation")
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    dt = float(sim.get("dt_s", default_dt(sc.params, sc.filter, sc.wp)))
    cfg = SimConfig(dt=dt, duration=float(sim.get("duration_s", 1.0)), seed=seed,
                    record_decimation=int(sim.get("record_decimation", 10)),
                    burn_in=sim.get("burn_in_s"))
    res = run_simulation(sc.params, sc.filter, sc.wp, cfg)
    G = sc.G
    half = 5 * max(G, sc.params.gamma_m * 10)
    edges = np.linspace(rad_to_hz(sc.params.omega_m - half), rad_to_hz(sc.params.omega_m + half),
                        int(sim.get("bins", 25)) + 1)
    cmp = compare_with_exact(res, sc.params, sc.filter, sc.wp, float(sim.get("segment_s", 0.01)),
                             edges)
    est = cmp.estimate
    est.metadata.update(seed=seed, dt_s=dt, max_abs_z=cmp.max_abs_z)
    outputs = []
    path = st["out"] / "psd.csv"
    write_spectrum_csv(path, est)
    outputs.append(path)
    ref_path = _write_table(st["out"] / "psd_vs_exact",
                            [{"omega_hz": f, "s_sim": 2 * s, "s_sim_err": 2 * e, "s_exact": 2 * r,
                              "z": z} for f, s, e, r, z in zip(est.omega_hz, est.s_total,
                                                                 est.s_err, cmp.reference, cmp.z)],
                            st["format"])
    outputs.append(ref_path)
    if args.timeseries == "csv":
        outputs.append(st["out"] / "timeseries.csv")
        res.to_csv(outputs[-1])
    elif args.timeseries == "npz":
        outputs.append(st["out"] / "timeseries.npz")
        res.to_npz(outputs[-1])
    print(f"simulated {cfg.duration:g} s with dt = {dt:.4g} s; max |z| vs exact = "
          f"{cmp.max_abs_z:.3g} over {len(cmp.z)} bins")
    return outputs


def _write_sweep(res, st, stem):
    csv_path = st["out"] / f"{stem}.csv"
    res.write_csv(csv_path)
    json_path = st["out"] / f"{stem}_summary.json"
    res.write_summary(json_path)
    if res.failures:
        print(f"{len(res.failures)} of {len(res.axis)} points failed", file=sys.stderr)
    return [csv_path, json_path]


def cmd_sweep_detuning(args, sc, st):
    from .sweeps import sweep_detuning
    sw = sc.section("sweep")
    ratios = np.linspace(float(sw.get("detuning_ratio_min", 0.95)),
                         float(sw.get("detuning_ratio_max", 1.05)),
                         int(sw.get("detuning_points", 41)))
    with _executor(st["threads"]) as ex:
        res = sweep_detuning(sc, ratios, executor=ex)
    if "min_gap_hz" in res.summary:
        print(f"minimum gap {res.summary['min_gap_hz']:.6g} Hz at delta_eff/omega_m = "
              f"{res.summary['min_gap_ratio']:.6g}")
    return _write_sweep(res, st, "sweep_detuning")


def cmd_sweep_gain(args, sc, st):
    from .sweeps import sweep_gain
    with _executor(st["threads"]) as ex:
        res = sweep_gain(sc, _gain_grid(sc), executor=ex)
    s = res.summary
    if "transition_gain" in s:
        print(f"single-to-double transition at G_fb = {s['transition_gain']:.4f} "
              f"(G/kappa_eff = {s['transition_g_over_kappa_eff']:.3f})")
    if "max_gain_implied_coupling_hz" in s:
        print(f"max-gain splitting implies G = 2 pi {s['max_gain_implied_coupling_hz']:.6g} Hz")
    return _write_sweep(res, st, "sweep_gain")


def cmd_cooling_curve(args, sc, st):
    from .occupancy import cooling_ratio_curve
    with _executor(st["threads"]) as ex:
        cc = cooling_ratio_curve(sc.params, sc.shape, sc.wp, _gain_grid(sc), mode=sc.mode,
                                 executor=ex)
    if st["format"] == "json":
        path = _write_table(st["out"] / "cooling_curve",
                            [dict(g_fb=g, kappa_eff_hz=rad_to_hz(k), gamma_eff_hz=rad_to_hz(ge),
                                  n_m_closed=a, n_m_integral=b, ratio_db=c, ratio_db_integral=d)
                             for g, k, ge, a, b, c, d in zip(
                                 cc.g_fb, cc.kappa_eff, cc.gamma_eff, cc.n_m_closed,
                                 cc.n_m_integral, cc.ratio_db, cc.ratio_db_integral)], "json")
    else:
        path = st["out"] / "cooling_curve.csv"
        cc.write_csv(path)
    g, db = cc.minimum()
    print(f"cooling minimum {db:.3f} dB at G_fb = {g:.4f}")
    return [path]


def cmd_steady_state(args, sc, st):
    from .steadystate import coupling_G, solve_steady_state
    branches = solve_steady_state(sc.params, sc.filter)
    rows = [{"n_s": b.n_s, "alpha_s": b.alpha_s, "q_s": b.q_s, "delta_hz": rad_to_hz(b.delta),
             "coupling_hz": rad_to_hz(coupling_G(sc.params, b.n_s)), "stable": b.stable}
            for b in branches]
    path = _write_table(st["out"] / "steady_state", rows, st["format"])
    for r in rows:
        print(f"n_s = {r['n_s']:.6g}  delta = {r['delta_hz']:.6g} Hz  "
              f"G = {r['coupling_hz']:.6g} Hz  {'stable' if r['stable'] else 'unstable'}")
    return [path]


def cmd_check(args, st):
    from .checks import format_table, run_checks
    results = run_checks(n_draws=args.draws, seed=args.seed if args.seed is not None else 0)
    print(format_table(results))
    rows = [{"check": r.name, "passed": r.passed, "worst": r.worst, "tolerance": r.tolerance,
             "draws": r.draws, "skipped": r.skipped} for r in results]
    path = _write_table(st["out"] / "check", rows, st["format"])
    return [path], all(r.passed for r in results)


HANDLERS = {
    "spectrum": cmd_spectrum,
    "occupancy": cmd_occupancy,
    "omit": cmd_omit,
    "simulate": cmd_simulate,
    "sweep-detuning": cmd_sweep_detuning,
    "sweep-gain": cmd_sweep_gain,
    "cooling-curve": cmd_cooling_curve,
    "steady-state": cmd_steady_state,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        if args.command == "check":
            st = _run_settings(args)
            st["out"].mkdir(parents=True, exist_ok=True)
            outputs, ok = cmd_check(args, st)
            _write_manifest(st["out"], args, None, outputs)
            return EXIT_OK if ok else EXIT_NUMERICAL
        sc = load_scenario(path=args.config, preset=args.preset, mode=args.mode, gain=args.gain)
        st = _run_settings(args, sc)
        st["out"].mkdir(parents=True, exist_ok=True)
        outputs = HANDLERS[args.command](args, sc, st)
        _write_manifest(st["out"], args, sc, outputs)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InstabilityError, SingularityError) as exc:
        print(f"instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY
    except (ConvergenceError, OptomechError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
