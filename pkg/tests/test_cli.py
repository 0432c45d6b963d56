import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from inloop_optomech import checks
from inloop_optomech.cli import main
from inloop_optomech.spectra import read_spectrum_csv

SMALL = """
[mechanics]
omega_m_hz = 343130.0
gamma_m_hz = 1.18
temperature_k = 300.0
[cavity]
kappa_hz = 22000.0
kappa0_hz = 14300.0
kappa_prime_hz = 3850.0
eta = 0.5
[pump]
detuning_hz = 330000.0
g0_hz = 1.8
[working_point]
coupling_hz = 3836.0
[grid]
n_linear = 801
n_cluster = 20
[simulation]
duration_s = 0.1
seed = 4
segment_s = 0.01
bins = 10
[sweep]
gain_points = 5
gain_max = 0.9
detuning_points = 5
"""

LOOP = """
[feedback]
kind = "bandpass"
quality = 3.0
loop_phase_deg = -110.0
gain = 0.5
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL + LOOP)
    return path


def run(args, tmp_path, sub="out"):
    out = tmp_path / sub
    code = main(list(args) + ["--out", str(out)])
    return code, out


@pytest.mark.parametrize("cmd,files", [
    ("spectrum", ["spectrum.csv"]),
    ("occupancy", ["occupancy.csv"]),
    ("omit", ["omit.csv"]),
    ("sweep-gain", ["sweep_gain.csv", "sweep_gain_summary.json"]),
    ("sweep-detuning", ["sweep_detuning.csv", "sweep_detuning_summary.json"]),
    ("cooling-curve", ["cooling_curve.csv"]),
    ("steady-state", ["steady_state.csv"]),
])
def test_subcommands_write_outputs_and_manifest(tmp_path, cfg, cmd, files):
    args = [cmd, "--config", str(cfg)]
    if cmd == "steady-state":
        args = [cmd, "--preset", "fig4"]
    code, out = run(args, tmp_path)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == cmd
    listed = {o["path"]: o["sha256"] for o in man["outputs"]}
    assert sorted(listed) == sorted(files)
    for name, digest in listed.items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert len(man["config_sha256"]) == 64
    assert "resolved_config" in man


def test_simulate_with_timeseries(tmp_path, cfg):
    code, out = run(["simulate", "--config", str(cfg), "--timeseries", "npz"], tmp_path)
    assert code == 0
    table = read_spectrum_csv(out / "psd.csv")
    assert np.all(np.isnan(table["s_rp"])) and np.all(table["s_total"] > 0)
    with np.load(out / "timeseries.npz") as z:
        assert z["q"].size > 0
    ref = (out / "psd_vs_exact.csv").read_text().splitlines()[0]
    assert ref == "omega_hz,s_sim,s_sim_err,s_exact,z"


def test_seed_flag_overrides_config(tmp_path, cfg):
    run(["simulate", "--config", str(cfg)], tmp_path, "a")
    run(["simulate", "--config", str(cfg), "--seed", "4"], tmp_path, "b")
    run(["simulate", "--config", str(cfg), "--seed", "5"], tmp_path, "c")
    a, b, c = ((tmp_path / s / "psd.csv").read_bytes() for s in "abc")
    assert a == b and a != c


def test_gain_zero_matches_no_feedback(tmp_path, cfg):
    bare = tmp_path / "bare.toml"
    bare.write_text(SMALL)
    assert run(["spectrum", "--config", str(cfg), "--gain", "0"], tmp_path, "g0")[0] == 0
    assert run(["spectrum", "--config", str(bare)], tmp_path, "none")[0] == 0
    a = read_spectrum_csv(tmp_path / "g0" / "spectrum.csv")
    b = read_spectrum_csv(tmp_path / "none" / "spectrum.csv")
    np.testing.assert_array_equal(a["omega_hz"], b["omega_hz"])
    np.testing.assert_allclose(a["s_total"], b["s_total"], rtol=1e-12)
    assert np.all(a["s_fb"] == 0)


def test_json_format_and_thread_invariance(tmp_path, cfg, monkeypatch):
    run(["sweep-gain", "--config", str(cfg), "--threads", "1"], tmp_path, "t1")
    monkeypatch.setenv("OPTOMECH_THREADS", "4")
    run(["sweep-gain", "--config", str(cfg)], tmp_path, "t4")
    for name in ("sweep_gain.csv", "sweep_gain_summary.json"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t4" / name).read_bytes()
    man = json.loads((tmp_path / "t4" / "manifest.json").read_text())
    assert "threads" not in man["flags"]
    code, out = run(["steady-state", "--preset", "fig4", "--format", "json"], tmp_path, "j")
    rows = json.loads((out / "steady_state.json").read_text())
    assert code == 0 and rows[0]["stable"] is True


def test_manifest_records_overrides(tmp_path, cfg):
    code, out = run(["occupancy", "--config", str(cfg), "--gain", "0.3", "--mode", "effective"],
                    tmp_path)
    man = json.loads((out / "manifest.json").read_text())
    assert man["flags"]["gain"] == 0.3
    assert man["resolved_config"]["feedback"]["gain"] == 0.3
    assert man["resolved_config"]["run"]["mode"] == "effective"


@pytest.mark.parametrize("args,code", [
    (["spectrum", "--preset", "fig3", "--bogus"], 1),
    (["spectrum"], 1),
    (["spectrum", "--preset", "fig3", "--config", "x.toml"], 1),
    (["spectrum", "--config", "does-not-exist.toml"], 1),
    (["spectrum", "--preset", "fig3", "--threads", "0"], 1),
    (["spectrum", "--preset", "fig4", "--gain", "1.2", "--mode", "exact"], 2),
    (["occupancy", "--preset", "fig4", "--gain", "1.2"], 2),
])
def test_exit_codes(tmp_path, args, code):
    assert run(args, tmp_path)[0] == code


def test_bad_thread_env_is_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("OPTOMECH_THREADS", "many")
    assert run(["spectrum", "--preset", "fig3"], tmp_path)[0] == 1


def test_check_subcommand(tmp_path, capsys):
    code, out = run(["check", "--draws", "5", "--seed", "1"], tmp_path)
    assert code == 0
    assert "PASS" in capsys.readouterr().out
    rows = (out / "check.csv").read_text().splitlines()
    assert len(rows) == 1 + len(checks.CHECKS)


def test_failed_check_exits_3(tmp_path, monkeypatch):
    monkeypatch.setattr(checks, "CHECKS", [("always fails", lambda d, rng: 1.0, 0.5)])
    assert run(["check", "--draws", "2"], tmp_path)[0] == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "inloop_optomech", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()


def test_omit_gain_list_runs_a_sweep(tmp_path):
    code, out = run(["omit", "--preset", "figS1"], tmp_path)
    assert code == 0
    summary = json.loads((out / "omit_sweep_summary.json").read_text())
    width = summary["traces"]["dip_width_hz"]
    assert len(width) == 7 and all(a < b for a, b in zip(width, width[1:]))
    code, out = run(["omit", "--preset", "figS1", "--gain", "0.5"], tmp_path, "single")
    assert code == 0 and (out / "omit.csv").exists()
