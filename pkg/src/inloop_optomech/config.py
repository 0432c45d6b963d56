"""TOML scenario files and bundled presets.

A scenario file has one table per concern; all frequencies are in Hz, powers
in W, temperatures in K and times in s::

    [mechanics]      omega_m_hz, gamma_m_hz, temperature_k | n_th, mass_kg
    [cavity]         kappa_hz, kappa0_hz, kappa_prime_hz, [kappa_dprime_hz], eta,
                     laser_wavelength_m
    [pump]           power_w, detuning_hz, g0_hz
    [working_point]  coupling_hz, detuning_hz   (both optional; without
                     coupling_hz the steady state is solved from the pump)
    [feedback]       kind = "bandpass" | "constant" | "zpk" | "none", gain,
                     quality, delay_s, and either target_kappa_eff_hz and
                     target_delta_eff_hz or loop_phase_deg; "zpk" takes
                     zeros_hz / poles_hz as [re, im] pairs and raw_gain
    [grid]           span_hz, n_linear, n_cluster
    [simulation]     duration_s, dt_s, seed, record_decimation, segment_s,
                     bins, burn_in_s
    [sweep]          detuning_ratio_min/max/points, gain_min/max/points,
                     omit_gains
    [run]            mode, out, threads, format

``feedback.gain`` is the normalised anti-squashing gain; the filter shape is
fixed by the target (or loop phase) and only its scale follows the gain.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .model import (
    ConfigError,
    EffectiveCavity,
    FeedbackFilter,
    PhysicalParams,
    WorkingPoint,
    hz_to_rad,
)
from .response import (
    InLoopCavity,
    Mode,
    calibrate_filter,
    chi_fb,
    constant_filter_for,
    effective_cavity,
    loop_target,
    normalized_gain,
    with_normalized_gain,
)

__all__ = ["Scenario", "load_config", "load_preset", "load_scenario", "preset_names", "resolve",
           "config_hash"]

KNOWN = {
    "name": None,
    "description": None,
    "mechanics": {"omega_m_hz", "gamma_m_hz", "temperature_k", "n_th", "mass_kg"},
    "cavity": {"kappa_hz", "kappa0_hz", "kappa_prime_hz", "kappa_dprime_hz", "eta",
               "laser_wavelength_m"},
    "pump": {"power_w", "detuning_hz", "g0_hz"},
    "working_point": {"coupling_hz", "detuning_hz"},
    "feedback": {"kind", "gain", "quality", "delay_s", "target_kappa_eff_hz",
                 "target_delta_eff_hz", "loop_phase_deg", "zeros_hz", "poles_hz", "raw_gain"},
    "grid": {"span_hz", "n_linear", "n_cluster"},
    "simulation": {"duration_s", "dt_s", "seed", "record_decimation", "segment_s", "bins",
                   "burn_in_s"},
    "sweep": {"detuning_ratio_min", "detuning_ratio_max", "detuning_points", "gain_min",
              "gain_max", "gain_points", "omit_gains"},
    "run": {"mode", "out", "threads", "format"},
}


def preset_names():
    files = resources.files("inloop_optomech").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))


def _check_keys(raw: dict):
    for key, val in raw.items():
        if key not in KNOWN:
            raise ConfigError(f"unknown config table {key!r}")
        allowed = KNOWN[key]
        if allowed is None:
            continue
        if not isinstance(val, dict):
            raise ConfigError(f"{key!r} must be a table")
        extra = set(val) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{key}]: {', '.join(sorted(extra))}")


def load_config(path) -> dict:
    """Parse a TOML scenario file into a raw dictionary (keys are validated)."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    _check_keys(raw)
    return raw


def load_preset(name: str) -> dict:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    ref = resources.files("inloop_optomech").joinpath("presets", f"{name}.toml")
    with ref.open("rb") as fh:
        raw = tomllib.load(fh)
    _check_keys(raw)
    return raw


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of a resolved configuration."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _req(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing [{section}] {key}")
    return table[key]


def _complex_list(pairs, section):
    out = []
    for pr in pairs:
        if isinstance(pr, (int, float)):
            out.append(complex(hz_to_rad(pr)))
        elif isinstance(pr, list) and len(pr) == 2:
            out.append(complex(hz_to_rad(pr[0]), hz_to_rad(pr[1])))
        else:
            raise ConfigError(f"[{section}] roots must be numbers or [re, im] pairs")
    return tuple(out)


@dataclass
class Scenario:
    """A fully resolved configuration.

    ``filter`` is the loop at the configured gain; ``shape`` is the same loop
    at unit normalised gain (or the raw filter if it has no anti-squashing
    component), from which other gains are obtained by scaling.
    """

    raw: dict
    params: PhysicalParams
    wp: WorkingPoint
    shape: FeedbackFilter
    filter: FeedbackFilter
    gain: Optional[float]
    mode: Mode
    name: str = "custom"

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def G(self) -> float:
        return self.wp.coupling(self.params)

    def filter_at(self, g_fb: float) -> FeedbackFilter:
        if normalized_gain(self.params, self.shape, self.wp.n_s, self.wp.delta) == 0:
            if g_fb == 0:
                return self.shape.with_gain(0.0)
            raise ConfigError("the configured loop has no anti-squashing component to scale")
        return with_normalized_gain(self.params, self.shape, self.wp, g_fb)

    def cavity(self, g_fb: Optional[float] = None, mode=None) -> InLoopCavity:
        filt = self.filter if g_fb is None else self.filter_at(g_fb)
        return InLoopCavity(self.params, filt, self.wp, mode=mode or self.mode)

    def effective(self, g_fb: Optional[float] = None) -> EffectiveCavity:
        filt = self.filter if g_fb is None else self.filter_at(g_fb)
        return effective_cavity(self.params, filt, self.wp)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def with_detuning(self, delta: float) -> "Scenario":
        """Same coupling, loop phase and normalised gain at a new detuning (rad/s)."""
        raw = copy.deepcopy(self.raw)
        raw.setdefault("working_point", {})["detuning_hz"] = delta / (2 * math.pi)
        raw["working_point"]["coupling_hz"] = self.G / (2 * math.pi)
        fb = raw.setdefault("feedback", {})
        if fb.get("kind", "bandpass") in ("bandpass", "constant") and self.gain is not None:
            # an effective-cavity target is tied to the old detuning; keep its loop phase
            val = chi_fb(self.wp.delta, self.params, self.shape, self.wp.n_s)
            fb.pop("target_kappa_eff_hz", None)
            fb.pop("target_delta_eff_hz", None)
            fb["loop_phase_deg"] = math.degrees(math.atan2(val.imag, val.real))
            fb["gain"] = self.gain
        return resolve(raw, name=self.name)


def _params(raw: dict) -> PhysicalParams:
    mech, cav, pump = raw.get("mechanics", {}), raw.get("cavity", {}), raw.get("pump", {})
    temp, nth = mech.get("temperature_k"), mech.get("n_th")
    if temp is None and nth is None:
        raise ConfigError("[mechanics] needs temperature_k or n_th")
    if temp is not None and nth is not None:
        raise ConfigError("[mechanics] give only one of temperature_k and n_th")
    return PhysicalParams.from_hz(
        omega_m_hz=_req(mech, "omega_m_hz", "mechanics"),
        gamma_m_hz=_req(mech, "gamma_m_hz", "mechanics"),
        kappa_hz=_req(cav, "kappa_hz", "cavity"),
        kappa0_hz=_req(cav, "kappa0_hz", "cavity"),
        kappa_prime_hz=_req(cav, "kappa_prime_hz", "cavity"),
        kappa_dprime_hz=cav.get("kappa_dprime_hz"),
        delta0_hz=_req(pump, "detuning_hz", "pump"),
        g0_hz=_req(pump, "g0_hz", "pump"),
        eta=cav.get("eta", 1.0),
        n_th=nth,
        temperature=temp,
        pump_power=pump.get("power_w", 0.0),
        laser_wavelength=cav.get("laser_wavelength_m", 1064e-9),
        mass=mech.get("mass_kg"),
    )


def _working_point(raw: dict, params: PhysicalParams, fb: dict) -> WorkingPoint:
    wpt = raw.get("working_point", {})
    delta = hz_to_rad(wpt.get("detuning_hz", raw["pump"]["detuning_hz"]))
    if "coupling_hz" in wpt:
        return WorkingPoint.from_coupling(params, hz_to_rad(wpt["coupling_hz"]), delta)
    # solve the steady state; only a zpk loop can have a DC component
    from .steadystate import lowest_stable_branch, solve_steady_state
    dc = FeedbackFilter(gain=0.0)
    if fb.get("kind") == "zpk":
        dc = _zpk_filter(fb)
    return lowest_stable_branch(solve_steady_state(params, dc)).working_point


def _zpk_filter(fb: dict) -> FeedbackFilter:
    return FeedbackFilter(gain=float(fb.get("raw_gain", 0.0)),
                          zeros=_complex_list(fb.get("zeros_hz", []), "feedback"),
                          poles=_complex_list(fb.get("poles_hz", []), "feedback"),
                          delay=float(fb.get("delay_s", 0.0)))


def _loop(params: PhysicalParams, wp: WorkingPoint, fb: dict):
    kind = fb.get("kind", "none" if not fb else "bandpass")
    delay = float(fb.get("delay_s", 0.0))
    if kind == "none":
        return FeedbackFilter(gain=0.0, delay=delay), None
    if kind == "zpk":
        filt = _zpk_filter(fb)
        g = normalized_gain(params, filt, wp.n_s, wp.delta)
        return filt, g
    if kind not in ("bandpass", "constant"):
        raise ConfigError(f"unknown feedback kind {kind!r}")
    if "target_kappa_eff_hz" in fb or "target_delta_eff_hz" in fb:
        t = loop_target(params, wp.delta,
                        kappa_eff=hz_to_rad(_req(fb, "target_kappa_eff_hz", "feedback")),
                        delta_eff=hz_to_rad(_req(fb, "target_delta_eff_hz", "feedback")))
        if t.imag >= 0:
            raise ConfigError("feedback target must narrow the cavity (kappa_eff < kappa)")
        t = t / (-t.imag / params.kappa)
        default_gain = 1.0 - fb["target_kappa_eff_hz"] / (params.kappa / (2 * math.pi))
    elif "loop_phase_deg" in fb:
        t = loop_target(params, wp.delta, g_fb=1.0, loop_phase=math.radians(fb["loop_phase_deg"]))
        default_gain = None
    else:
        raise ConfigError("[feedback] needs target_kappa_eff_hz/target_delta_eff_hz "
                          "or loop_phase_deg")
    gain = fb.get("gain", default_gain)
    if gain is None:
        raise ConfigError("[feedback] gain is required with loop_phase_deg")
    if kind == "bandpass":
        shape = calibrate_filter(params, wp, quality=float(fb.get("quality", 3.0)), target=t,
                                 delay=delay)
    else:
        if delay:
            raise ConfigError("a constant loop sets its own delay; omit delay_s")
        shape = constant_filter_for(params, wp, t)
    return shape, float(gain)


def resolve(raw: dict, *, name: str = "custom", mode=None, gain=None) -> Scenario:
    """Build a :class:`Scenario`; ``mode`` and ``gain`` override the file."""
    raw = copy.deepcopy(raw)
    _check_keys(raw)
    if mode is not None:
        raw.setdefault("run", {})["mode"] = Mode.parse(mode).value
    if gain is not None:
        raw.setdefault("feedback", {})["gain"] = float(gain)
    params = _params(raw)
    fb = raw.get("feedback", {})
    wp = _working_point(raw, params, fb)
    shape, g = _loop(params, wp, fb)
    if fb.get("kind") == "zpk" and "gain" in fb:
        if g == 0:
            raise ConfigError("the zpk loop has no anti-squashing component to scale")
        filt = with_normalized_gain(params, shape, wp, float(fb["gain"]))
        g = float(fb["gain"])
    elif g is None or fb.get("kind") == "zpk":
        filt = shape
    else:
        filt = with_normalized_gain(params, shape, wp, g)
    run_mode = Mode.parse(raw.get("run", {}).get("mode", "exact"))
    return Scenario(raw=raw, params=params, wp=wp, shape=shape, filter=filt, gain=g,
                    mode=run_mode, name=raw.get("name", name))


def load_scenario(path=None, preset=None, **overrides) -> Scenario:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of a config path and a preset name")
    if preset is not None:
        return resolve(load_preset(preset), name=preset, **overrides)
    return resolve(load_config(path), name=Path(path).stem, **overrides)
