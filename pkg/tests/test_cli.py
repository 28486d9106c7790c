import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from raman_memory.cli import main
from raman_memory.config import ConfigError, load_config
from raman_memory.experiments import reference_params
from raman_memory.grid_pulse import ComplexEnvelope, envelope_to_csv


def run(tmp_path, *args):
    return main([*args, "--output-dir", str(tmp_path)])


def only(tmp_path, prefix, ext="json"):
    hits = [f for f in os.listdir(tmp_path) if f.startswith(prefix + "_") and f.endswith("." + ext)]
    assert len(hits) == 1, hits
    return tmp_path / hits[0]


def load(tmp_path, prefix):
    return json.loads(only(tmp_path, prefix).read_text())


def test_store_zero_control(tmp_path):
    ctrl = tmp_path / "zero.csv"
    ctrl.write_text(envelope_to_csv(ComplexEnvelope.zeros(reference_params().time_grid())))
    out = tmp_path / "out"
    assert run(out, "store", "--control", str(ctrl)) == 0
    doc = load(out, "store")
    assert doc["eta_w"] == 0.0
    assert "config_hash" in doc and doc["seed"] == 0


def test_store_reference_and_retrieve(tmp_path, capsys):
    assert run(tmp_path, "store") == 0
    assert load(tmp_path, "store")["eta_w"] >= 0.80
    spin = only(tmp_path, "spin_wave", "csv")
    assert spin.read_text().startswith("# config_hash=")
    assert run(tmp_path, "retrieve", "--spin", str(spin)) == 0
    assert load(tmp_path, "retrieve")["eta_r"] >= 0.97
    assert "eta_r" in capsys.readouterr().out


def test_optimize_reference_and_zero_budget(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "optimize") == 0
    doc = load(a, "optimize")
    assert doc["achieved_eta_w"] >= 0.98
    assert doc["energy"] <= doc["energy_budget"] * (1 + 1e-9)
    assert run(b, "optimize", "--set", "control.energy_budget=0") == 0
    doc = load(b, "optimize")
    assert doc["achieved_eta_w"] == 0.0 and doc["energy"] == 0.0


def test_rerun_is_byte_identical(tmp_path):
    args = ["tomo", "--set", "tomography.n_samples=3000", "--set", "tomography.n_max=10", "--seed", "4"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *args) == 0
    assert run(b, *args) == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b)) and len(names) == 5
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
        assert "config_hash" in (a / n).read_text()


@pytest.mark.parametrize(
    "text, needle",
    [
        ("{not json", "not valid JSON"),
        ('{"memory": {"dd": 3}}', "memory.dd"),
        ('{"memory": {"d": "big"}}', "memory.d"),
        ('{"memory": {"d": -5}}', "memory"),
        ('{"sweep": {"points": [1.0]}}', "sweep"),
    ],
)
def test_malformed_config_exit_2_without_output(tmp_path, capsys, text, needle):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(text)
    out = tmp_path / "out"
    assert run(out, "store", "--config", str(cfg)) == 2
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_bad_override_exit_2(tmp_path):
    assert run(tmp_path / "o", "tomo", "--set", "nonsense") == 2
    assert run(tmp_path / "o", "tomo", "--set", "tomography.bins=3") == 2
    assert not (tmp_path / "o").exists()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tomography": {"n_bar": 1.0, "n_max": 12}, "seed": 3}))
    env = {"RAMAN_MEMORY__TOMOGRAPHY__N_BAR": "2.0", "RAMAN_MEMORY__SEED": "7"}
    c = load_config(str(cfg), env=env)
    assert (c.n_bar, c.ml.n_max, c.seed) == (2.0, 12, 7)
    c = load_config(str(cfg), ["tomography.n_bar=3"], env=env, seed=11)
    assert (c.n_bar, c.seed) == (3.0, 11)
    # seed and output paths do not change the hash
    assert load_config(seed=1).hash == load_config(seed=2, output_dir="x").hash
    assert load_config(overrides=["memory.d=500"]).hash != load_config().hash
    with pytest.raises(ConfigError):
        load_config(env={"RAMAN_MEMORY__MEMORY__NOPE": "1"})


def test_env_override_reaches_command(tmp_path, monkeypatch):
    monkeypatch.setenv("RAMAN_MEMORY__TOMOGRAPHY__N_SAMPLES", "2000")
    monkeypatch.setenv("RAMAN_MEMORY__TOMOGRAPHY__N_MAX", "10")
    assert run(tmp_path, "tomo") == 0
    assert load(tmp_path, "tomo")["n_samples"] == 2000


def test_io_failure_exit_4(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(blocker, "sweep", "--set", "sweep.kind=fidelity_vs_nbar", "--set", "sweep.points=[1,2]") == 4
    assert run(tmp_path / "o", "store", "--input", str(tmp_path / "missing.csv")) == 4
    assert run(tmp_path / "o", "store", "--config", str(tmp_path / "missing.json")) == 4


def test_unparseable_envelope_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n1,2\n")
    assert run(tmp_path / "o", "store", "--input", str(bad)) == 2


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_numerical_failure_exit_3(tmp_path):
    assert run(tmp_path, "tomo", "--set", "tomography.n_bar=30", "--set", "tomography.n_max=10") == 3


def test_sweep_fidelity_vs_nbar_csv(tmp_path):
    args = ["sweep", "--set", "sweep.kind=fidelity_vs_nbar", "--set", "sweep.points=[0.76,4.2,7.9]",
            "--set", "channel.eta_t=0.826", "--set", "channel.noise_photons=0",
            "--set", "channel.fwm_fraction=0", "--jobs", "2"]
    assert run(tmp_path, *args) == 0
    path = only(tmp_path, "fidelity_vs_nbar", "csv")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=") and "seed=0" in lines[0]
    rows = list(csv.DictReader(lines[1:]))
    assert [float(r["x"]) for r in rows] == [0.76, 4.2, 7.9]
    assert float(rows[1]["closed_form"]) == pytest.approx(0.9663, abs=5e-5)
    assert json.loads(only(tmp_path, "fidelity_vs_nbar").read_text())["config_hash"] in path.name


def test_tomo_reference_channel(tmp_path):
    assert run(tmp_path, "tomo") == 0
    doc = load(tmp_path, "tomo")
    assert doc["n_samples"] == 100_000 and doc["n_bar"] == 0.76
    assert 0.97 <= doc["fidelity"] <= 0.99


def test_report_identity_channel(tmp_path):
    args = ["report", "--set", "channel.eta_t=1", "--set", "channel.noise_photons=0",
            "--set", "channel.fwm_fraction=0"]
    assert run(tmp_path, *args) == 0
    rep = load(tmp_path, "report")
    for d in rep["fidelity_detail"].values():
        assert d["ratio_to_closed_form"] == pytest.approx(1.0, abs=0.01)
    assert 0.80 <= rep["quantities"]["eta_t"]["simulated"] <= 0.85


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "raman_memory", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("store", "retrieve", "optimize", "sweep", "tomo", "report"):
        assert cmd in res.stdout
