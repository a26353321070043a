import json
import subprocess
import sys

import numpy as np
import pytest

from lgcmed.cli import main, parse_times
from lgcmed.io import bundled_estimates_path, read_effects_csv

from _support import TABLE3_NDE, TABLE3_NIE

CONFIG = {
    "model": {"kind": "BinaryExposure", "interaction": True, "n_occasions": 4},
    "params": {"delta_0": 1.0, "delta_1": 0.5, "beta_0": 0.4, "beta_1": 0.3,
               "phi_1": 0.4, "phi_2": 0.5, "phi_3": 0.6, "phi_4": 0.2,
               "gamma_1": 0.3, "gamma_2": 0.1, "gamma_3": 0.4, "gamma_5": 0.2,
               "sigma2_M": 0.5, "sigma2_Y": 0.5, "psi_M_22": 0.25, "psi_Y_22": 0.25},
    "simulation": {"n": 400},
    "seed": 42,
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(CONFIG))
    return path


def test_parse_times():
    assert parse_times("0:3:1") == [0, 1, 2, 3]
    assert parse_times("0:1:0.25") == [0, 0.25, 0.5, 0.75, 1.0]
    assert parse_times("0,2.5") == [0, 2.5]


def test_effects_table3(tmp_path, capsys):
    out = tmp_path / "e.csv"
    rc = main(["effects", "--estimates", bundled_estimates_path(), "--times", "0:3:1",
               "--contrast", "0,-1", "--out", str(out)])
    assert rc == 0
    assert "diagonal-approximation" in capsys.readouterr().err
    rows = read_effects_csv(out)
    nde = [r["point"] for r in rows if r["kind"] == "NDE"]
    nie = [r["point"] for r in rows if r["kind"] == "NIE"]
    assert nde == pytest.approx(list(TABLE3_NDE), abs=1e-12)
    assert nie == pytest.approx(list(TABLE3_NIE), abs=1e-12)
    assert len(rows) == 8


def test_gradcheck(capsys):
    rc = main(["gradcheck", "--estimates", bundled_estimates_path(), "--t", "1.3",
               "--contrast", "0,-1", "--seed", "5"])
    out = capsys.readouterr().out
    assert rc == 0 and "max relative error" in out
    assert float(out.strip().split()[-1]) < 1e-6


def test_missing_flag_exit_1(capsys):
    rc = main(["fit", "--config", "c.json", "--out", "o.json"])
    err = capsys.readouterr().err
    assert rc == 1 and "usage:" in err and "--data" in err


def test_bad_file_exit_1(tmp_path, capsys):
    rc = main(["effects", "--estimates", str(tmp_path / "nope.json"), "--times", "0",
               "--contrast", "0,-1", "--out", str(tmp_path / "x.csv")])
    assert rc == 1


def test_simulate_fit_effects_pipeline(tmp_path, config, capsys):
    data = tmp_path / "d.csv"
    assert main(["simulate", "--config", str(config), "--out", str(data)]) == 0
    assert json.loads(capsys.readouterr().out)["seed"] == 42
    report = tmp_path / "fit.json"
    assert main(["fit", "--data", str(data), "--config", str(config), "--out", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["seed"] == 42 and rep["converged"] and len(rep["vcov"]["order"]) == 24
    eff = tmp_path / "eff.csv"
    assert main(["effects", "--estimates", str(report), "--times", "0,1", "--contrast", "1,0",
                 "--kinds", "NDE,NIE,Total", "--out", str(eff)]) == 0
    assert len(read_effects_csv(eff)) == 6
    # deterministic given identical inputs
    report2 = tmp_path / "fit2.json"
    main(["fit", "--data", str(data), "--config", str(config), "--out", str(report2)])
    assert report.read_text() == report2.read_text()


def test_oracle(config, capsys):
    assert main(["oracle", "--config", str(config), "--t", "1", "--contrast", "1,0",
                 "--nmc", "20000", "--seed", "3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["seed"] == 3 and abs(rep["nie"] - rep["closed_form"]["NIE"]) <= 4 * rep["nie_mc_se"] + 1e-12


def test_recovery(config, tmp_path):
    out = tmp_path / "r.json"
    assert main(["recovery", "--config", str(config), "--reps", "2", "--seed", "1",
                 "--n", "300", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["reps"] == 2 and rep["seed"] == 1


def test_numerical_failure_exit_2(tmp_path):
    rows = ["subject_id,variable,occasion,value"]
    for i in range(20):
        rows.append(f"s{i},x,0,1")
        for k in range(4):
            rows += [f"s{i},m,{k},{k + 1}", f"s{i},y,{k},{0.5 * k}"]
    data = tmp_path / "flat.csv"
    data.write_text("\n".join(rows) + "\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"n_occasions": 4}}))
    rc = main(["fit", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "o.json")])
    assert rc == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "lgcmed", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "lgcmed" in r.stdout
