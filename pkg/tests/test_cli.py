from __future__ import annotations

import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from lbmpc_lab.cli import main
from lbmpc_lab.dynamics import History
from lbmpc_lab.svgplot import line_plot, read_metadata


def body(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def header(path):
    return dict(ln[2:].split("=", 1) for ln in path.read_text().splitlines() if ln.startswith("# "))


def test_simulate_example1(tmp_path, capsys):
    rc = main(["simulate", "--scenario", "example1", "-T", "1", "--seed", "3", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "seed=3" in out and "steps=2" in out
    hist = History.from_csv((tmp_path / "history.csv").read_text())
    assert len(hist) == 2
    h = header(tmp_path / "history.csv")
    assert h["command"] == "simulate" and h["seed"] == "3" and h["scenario"] == "example1"


def test_simulate_t0(tmp_path):
    assert main(["simulate", "--scenario", "example2", "-T", "0", "--out", str(tmp_path)]) == 0
    assert len(History.from_csv((tmp_path / "history.csv").read_text())) == 1


def test_simulate_hvac_states_in_x(tmp_path):
    assert main(["simulate", "--scenario", "hvac", "-T", "100", "--seed", "2", "--out", str(tmp_path), "--plot"]) == 0
    hist = History.from_csv((tmp_path / "history.csv").read_text())
    xs = np.array(hist.states).ravel()
    assert len(hist) == 101 and np.all((xs >= 20) & (xs <= 24))
    assert (tmp_path / "history.svg").exists()


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--scenario", "lti_scalar", "-T", "15", "--seed", "8", "--out", str(d)]) == 0
    assert (a / "history.csv").read_text() == (b / "history.csv").read_text()


def test_regret_outputs(tmp_path, capsys):
    cfg = {
        "scenario": "hvac",
        "T": 128,
        "replicates": 2,
        "seed": 4,
        "jobs": 1,
        "policy": {"N": 1, "refit_stride": 16},
        "compare": {"N": 2},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    assert main(["regret", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    o = tmp_path / "o"
    rows = body(o / "regret_curve.csv")
    assert rows[0].split(",")[:3] == ["t", "mean", "std_error"]
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "2", "4", "8", "16", "32", "64", "128"]
    raw = body(o / "regret_raw.csv")
    assert len(raw) == 1 + 2
    for name in ("regret.svg", "cost_gap.csv", "cost_gap.svg"):
        assert (o / name).exists(), name
    # fewer than four grid points with t >= 100
    assert not (o / "scaling.csv").exists()
    meta = read_metadata((o / "regret.svg").read_text())
    mean = [float(r.split(",")[1]) for r in rows[1:]]
    assert np.allclose(meta["series"][0]["y"], mean)
    assert "final_regret=" in capsys.readouterr().out


def test_estimate_from_history(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--scenario", "hvac", "-T", "200", "--seed", "1", "--out", str(sim)]) == 0
    assert (
        main(["estimate", "--scenario", "hvac", "--history", str(sim / "history.csv"), "--out", str(tmp_path), "--plot"])
        == 0
    )
    est = body(tmp_path / "estimates.csv")
    assert est[0].startswith("t,theta_hat1,theta_hat2,theta_hat3,nll")
    h = header(tmp_path / "concentration.csv")
    assert "np.float64" not in "".join(h.values())
    float(h["fit_a"]), float(h["loglog_slope"])
    assert (tmp_path / "concentration.svg").exists()


def test_invariant_set(tmp_path, capsys):
    assert main(["invariant-set", "--scenario", "example2", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "omega.json").read_text())
    assert doc["scenario"] == "example2"
    assert doc["omega"]["offsets"] == [0.5, 0.5]
    out = capsys.readouterr().out
    assert "omega_box_lo=[-0.5]" in out and "omega_box_hi=[0.5]" in out


def test_scenario_file_relative_to_config(tmp_path):
    (tmp_path / "scn.json").write_text(json.dumps({"preset": "example1"}))
    (tmp_path / "cfg.json").write_text(json.dumps({"scenario": "scn.json", "T": 2}))
    assert main(["simulate", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--scenario", "nope.json"],
        ["simulate", "--scenario", "example1", "-T", "-1"],
        ["regret", "--scenario", "example1", "--replicates", "0"],
        ["simulate", "--scenario", "example1", "--seed", "-5"],
        ["simulate", "--config", "/does/not/exist.json"],
        ["estimate", "--scenario", "example1", "--history", "/no/history.csv"],
        ["estimate", "--scenario", "example1", "-T", "0"],
    ],
)
def test_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_json(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "lbmpc_lab.cli", "invariant-set", "--scenario", "example1", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0 and "scenario=example1" in res.stdout


# svg


def test_svg_metadata_roundtrip():
    svg = line_plot(
        [{"name": "a<b", "x": [1, 2, 3], "y": [0.5, 1.5, -2.0], "band": [0.1, 0.2, 0.3]}],
        title="t & co",
        meta={"seed": 7},
    )
    ET.fromstring(svg)
    meta = read_metadata(svg)
    assert meta["meta"] == {"seed": 7} and meta["title"] == "t & co"
    assert meta["series"][0]["name"] == "a<b"
    assert meta["series"][0]["y"] == [0.5, 1.5, -2.0]
    assert meta["series"][0]["band"] == [0.1, 0.2, 0.3]


def test_svg_handles_degenerate_series():
    ET.fromstring(line_plot([{"name": "flat", "x": [1], "y": [0.0]}]))
    ET.fromstring(line_plot([]))
