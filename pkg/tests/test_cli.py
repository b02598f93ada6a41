import json
import subprocess
import sys

import numpy as np
import pytest

from wgmqed.cli import main
from wgmqed.model import save_model
from wgmqed.presets import m1_model


@pytest.fixture(scope="module")
def fig2b(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "fig2b"
    assert main(["simulate", "--scenario", "fig2b", "--workers", "1", "--out", str(out)]) == 0
    return out


def test_simulate_writes_a_bundle(fig2b):
    names = {p.name for p in fig2b.iterdir()}
    assert {"spectra.csv", "scenario.json", "fit.json", "metrics.json", "manifest.json"} <= names


def test_simulate_custom_config(tmp_path):
    cfg = tmp_path / "m1.json"
    save_model(m1_model(detuning=np.linspace(-1, 1, 21)), cfg)
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(cfg), "--ports", "drop,int1", "--workers", "1", "--out", str(out)]) == 0
    header = (out / "spectra.csv").read_text().splitlines()[0]
    assert header.startswith("step,sweep_value,frequency_THz")


@pytest.mark.parametrize("argv", [
    ["simulate", "--scenario", "fig2b", "--ports", ""],
    ["simulate", "--scenario", "fig2b", "--ports", "sideways"],
    ["simulate", "--scenario", "fig9"],
    ["simulate"],
])
def test_simulate_invalid_input_exits_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x" / "spectra.csv").exists()


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"mode_pairs": [], "emitters": []}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    cfg.write_text("{not json")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2


def test_missing_file_exits_4(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "x")]) == 4
    assert main(["fit", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x")]) == 4


def test_fit_then_metrics(fig2b, tmp_path):
    assert main(["fit", "--data", str(fig2b / "spectra.csv"), "--port", "drop", "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["converged"]
    # the narrow window only sees the top of the resonator, so allow a percent
    assert fit["parameters"]["linewidth_mhz"] == pytest.approx(125.0, rel=0.01)
    assert main(["metrics", "--from", str(tmp_path / "fit.json"), "--coupling", "490", "--kappa", "27",
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["beta"]["value"] == pytest.approx(0.736, abs=0.01)
    assert doc["C"]["provenance"] == "fitted"


def test_fit_needs_port_choice(fig2b, tmp_path):
    assert main(["fit", "--data", str(fig2b / "spectra.csv"), "--out", str(tmp_path)]) == 2


def test_fit_failure_exits_3(tmp_path):
    data = tmp_path / "flat.csv"
    x = np.linspace(-1, 1, 101)
    rows = ["detuning_GHz,intensity"] + [f"{v},{'nan' if k == 50 else 1.0}" for k, v in enumerate(x)]
    data.write_text("\n".join(rows) + "\n")
    assert main(["fit", "--data", str(data), "--origin", "400", "--out", str(tmp_path)]) == 3


def test_metrics_from_config_and_scenario_fit(fig2b, tmp_path):
    cfg = tmp_path / "m1.json"
    save_model(m1_model(), cfg)
    assert main(["metrics", "--from", str(cfg), "--fsr", "6.3", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["finesse"]["value"] == pytest.approx(233.333333333, rel=1e-9)
    assert doc["beta"]["provenance"] == "configured"
    assert main(["metrics", "--from", str(fig2b / "fit.json"), "--out", str(tmp_path)]) == 0
    assert main(["metrics", "--from", str(fig2b / "manifest.json"), "--out", str(tmp_path)]) == 2


def test_compare_exit_codes(fig2b, tmp_path):
    assert main(["compare", "--simulated", str(fig2b), "--reference", str(fig2b / "spectra.csv"),
                 "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "comparison.json").read_text())["passed"]
    other = tmp_path / "quoted"
    cfg = tmp_path / "q.json"
    save_model(m1_model("quoted"), cfg)
    assert main(["simulate", "--scenario", "fig2b", "--config", str(cfg), "--workers", "1", "--out", str(other)]) == 0
    assert main(["compare", "--simulated", str(other), "--reference", str(fig2b), "--rms", "0.001"]) == 1
    coarse = tmp_path / "coarse.csv"
    lines = (fig2b / "spectra.csv").read_text().splitlines()
    coarse.write_text("\n".join(lines[:1] + lines[1::9]) + "\n")
    assert main(["compare", "--simulated", str(fig2b), "--reference", str(coarse)]) == 2
    assert main(["compare", "--simulated", str(fig2b), "--reference", str(coarse), "--interpolate"]) == 0


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "wgmqed.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "wgmqed" in res.stdout
