import math

import pytest

from inloop_optomech.config import (
    config_hash,
    load_config,
    load_preset,
    load_scenario,
    preset_names,
    resolve,
)
from inloop_optomech.model import ConfigError, hz_to_rad, rad_to_hz
from inloop_optomech.response import Mode, chi_fb, normalized_gain


def test_bundled_presets():
    assert preset_names() == ["fig2", "fig3", "fig4", "figS1"]
    for name in preset_names():
        sc = load_scenario(preset=name)
        assert sc.name == name
        assert sc.effective().kappa_eff > 0


def test_fig3_preset_effective_cavity():
    sc = load_scenario(preset="fig3")
    eff = sc.effective()
    assert rad_to_hz(eff.kappa_eff) == pytest.approx(1210.0, rel=1e-9)
    assert rad_to_hz(eff.delta_eff) == pytest.approx(342.65e3, rel=1e-12)
    assert rad_to_hz(sc.G) == pytest.approx(3836.0, rel=1e-12)
    assert sc.gain == pytest.approx(1 - 1210 / 22e3)
    assert sc.mode is Mode.EFFECTIVE


def test_gain_and_mode_overrides():
    sc = load_scenario(preset="fig4", gain=0.5, mode="exact")
    assert sc.mode is Mode.EXACT and sc.gain == 0.5
    assert normalized_gain(sc.params, sc.filter, sc.wp.n_s, sc.wp.delta) == pytest.approx(0.5)
    assert sc.raw["feedback"]["gain"] == 0.5 and sc.raw["run"]["mode"] == "exact"
    zero = load_scenario(preset="fig4", gain=0.0)
    assert zero.filter.gain == 0.0


def test_hash_is_canonical_and_tracks_overrides():
    a = load_scenario(preset="fig4")
    b = load_scenario(preset="fig4")
    assert a.hash == b.hash == config_hash(dict(reversed(list(a.raw.items()))))
    assert load_scenario(preset="fig4", gain=0.5).hash != a.hash


def test_scaled_filters_share_the_loop_phase():
    sc = load_scenario(preset="fig4")
    ref = chi_fb(sc.wp.delta, sc.params, sc.filter, sc.wp.n_s)
    for g in (0.1, 0.6):
        val = chi_fb(sc.wp.delta, sc.params, sc.filter_at(g), sc.wp.n_s)
        assert math.atan2(val.imag, val.real) == pytest.approx(math.atan2(ref.imag, ref.real))
    assert math.degrees(math.atan2(ref.imag, ref.real)) == pytest.approx(
        sc.raw["feedback"]["loop_phase_deg"])


def test_with_detuning_keeps_coupling_phase_and_gain():
    sc = load_scenario(preset="fig3")
    new = sc.with_detuning(sc.wp.delta + hz_to_rad(2e3))
    assert new.G == pytest.approx(sc.G, rel=1e-12)
    assert new.gain == pytest.approx(sc.gain)
    assert new.effective().kappa_eff == pytest.approx(sc.effective().kappa_eff, rel=1e-9)
    shift = sc.wp.delta - sc.effective().delta_eff
    assert new.wp.delta - new.effective().delta_eff == pytest.approx(shift, rel=1e-9)


def test_working_point_from_steady_state():
    raw = load_preset("fig4")
    del raw["working_point"]["coupling_hz"]
    sc = resolve(raw)
    # 26 uW pump with the calibrated coupling budget gives G near 1.96 kHz
    assert rad_to_hz(sc.G) == pytest.approx(1967.0, rel=2e-3)


def write(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    return path


BASE = """
[mechanics]
omega_m_hz = 1e5
gamma_m_hz = 1.0
n_th = 100.0
[cavity]
kappa_hz = 1e4
kappa0_hz = 5e3
kappa_prime_hz = 2e3
eta = 0.5
[pump]
detuning_hz = 1e5
g0_hz = 1.0
[working_point]
coupling_hz = 500.0
"""


def test_minimal_file_without_feedback(tmp_path):
    sc = load_scenario(path=write(tmp_path, BASE))
    assert sc.name == "c" and sc.gain is None
    assert sc.filter.gain == 0.0
    assert sc.mode is Mode.EXACT
    assert sc.params.kappa_dprime == pytest.approx(hz_to_rad(3e3))


@pytest.mark.parametrize("extra,match", [
    ("[bogus]\nx = 1\n", "unknown config table"),
    ("[grid]\nspan = 1\n", "unknown keys"),
    ("[feedback]\nkind = 'bandpass'\nquality = 3.0\n", "needs target"),
    ("[feedback]\nkind = 'bandpass'\nloop_phase_deg = -100.0\n", "gain is required"),
    ("[feedback]\nkind = 'bandpass'\nloop_phase_deg = 30.0\ngain = 0.5\n", "negative sine"),
    ("[feedback]\nkind = 'constant'\nloop_phase_deg = -100.0\ngain = 0.5\ndelay_s = 1e-6\n",
     "constant loop"),
    ("[feedback]\nkind = 'lowpass'\n", "unknown feedback kind"),
    ("[run]\nmode = 'fast'\n", "mode"),
])
def test_invalid_files(tmp_path, extra, match):
    with pytest.raises(ConfigError, match=match):
        load_scenario(path=write(tmp_path, BASE + extra))


def test_missing_required_key(tmp_path):
    with pytest.raises(ConfigError, match="omega_m_hz"):
        load_scenario(path=write(tmp_path, BASE.replace("omega_m_hz = 1e5\n", "")))


def test_temperature_and_occupancy_exclusive(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(path=write(tmp_path, BASE.replace("n_th = 100.0", "n_th = 1.0\n"
                                                                         "temperature_k = 3.0")))


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(write(tmp_path, "[mechanics\n"))
    with pytest.raises(ConfigError):
        load_scenario()
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("fig9")


def test_zpk_loop(tmp_path):
    text = BASE + """
[feedback]
kind = "zpk"
zeros_hz = [[0.0, 0.0]]
poles_hz = [[-3e4, 1e5], [-3e4, -1e5]]
raw_gain = 1e-3
"""
    sc = load_scenario(path=write(tmp_path, text))
    g = normalized_gain(sc.params, sc.filter, sc.wp.n_s, sc.wp.delta)
    assert sc.gain == pytest.approx(g)
    scaled = load_scenario(path=write(tmp_path, text + "gain = 0.2\n"))
    assert normalized_gain(scaled.params, scaled.filter, sc.wp.n_s, sc.wp.delta) == \
        pytest.approx(0.2)
