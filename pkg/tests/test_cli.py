from __future__ import annotations

import json
import math

import numpy as np
import pytest

from ucps.cli import (
    ConfigError,
    RunConfig,
    cluster_energies,
    config_from_mapping,
    load_config,
    main,
    parse_list,
)


def body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def footer(text):
    return [line[2:] for line in text.splitlines() if line.startswith("#")]


def write_config(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(kw))
    return str(path)


def test_config_defaults_and_nesting():
    cfg = config_from_mapping({"params": {"h": 0.5}, "seeds": [3, 4], "quench": {"h0": 1.5, "h1": 0.1, "t_max": 1}})
    assert cfg.h == 0.5 and cfg.seeds == (3, 4) and cfg.quench.rkf_tol == 1e-8
    assert load_config(None) == RunConfig()


@pytest.mark.parametrize(
    "raw",
    [{"model": "potts"}, {"engine": "peps"}, {"h": float("inf")}, {"seeds": []}, {"n": 0}, {"bogus": 1},
     {"params": {"delta": 1}}, {"quench": {"h0": 1}}, {"dt": -1}],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_mapping(raw)


def test_parse_list_and_clusters():
    assert parse_list("0,1.5") == [0.0, 1.5]
    assert parse_list("0:1:3") == [0.0, 0.5, 1.0]
    assert parse_list("1,2", int) == [1, 2]
    with pytest.raises(ConfigError):
        parse_list("0:1")
    with pytest.raises(ConfigError):
        parse_list("x")
    clusters = cluster_energies([-1.0, -1.0 + 5e-9, -0.5, math.nan], tol=1e-8)
    assert [c for _, c in clusters] == [2, 1]


def test_groundstate_is_deterministic_and_reports_clusters(tmp_path, capsys):
    cfg = write_config(tmp_path, model="ising", h=1.0, n=1, seeds=[0, 1], tol=1e-9)
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["groundstate", "--config", cfg, "--out", str(out1), "--no-timing"]) == 0
    assert main(["groundstate", "--config", cfg, "--out", str(out2), "--no-timing", "--threads", "2"]) == 0
    text = out1.read_text()
    assert text == out2.read_text()
    rows = body(text)
    assert rows[0].startswith("seed,converged,energy")
    assert len(rows) == 3
    assert "clusters (tol 1e-08): 1" in footer(text)
    assert json.loads(footer(text)[1][len("config: "):])["seeds"] == [0, 1]


def test_unconverged_run_exits_nonzero(tmp_path):
    cfg = write_config(tmp_path, n=2, max_steps=2, seeds=[0])
    assert main(["groundstate", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 1


def test_umps_engine_cell(tmp_path):
    out = tmp_path / "u.csv"
    assert main(["groundstate", "--set", "engine=\"umps\"", "--set", "D=2", "--set", "tol=1e-7", "--set", "h=0.5",
                 "--out", str(out)]) == 0
    row = body(out.read_text())[1].split(",")
    assert float(row[2]) < -1.0


def test_angle_scan_pi_rotation_gives_same_energies(tmp_path):
    out = tmp_path / "scan.csv"
    assert main(["angle-scan", "--seeds", "0,1", "--set", "n=1", "--set", "tol=1e-9", "--thetas", f"0,{np.pi}",
                 "--out", str(out)]) == 0
    rows = [r.split(",") for r in body(out.read_text())[1:]]
    e0 = sorted(float(r[3]) for r in rows if float(r[0]) == 0.0)
    e1 = sorted(float(r[3]) for r in rows if float(r[0]) != 0.0)
    assert np.allclose(e0, e1, atol=1e-9)


def test_single_angle_single_seed(tmp_path):
    out = tmp_path / "one.csv"
    assert main(["angle-scan", "--set", "n=1", "--thetas", "0.3", "--out", str(out)]) == 0
    assert len(body(out.read_text())) == 2


def test_quench_with_checkpoint(tmp_path):
    cfg = write_config(tmp_path, n=1, tol=1e-10, quench={"h0": 1.5, "h1": 0.1, "t_max": 0.2, "output_dt": 0.1})
    ck = tmp_path / "gs.json"
    out = tmp_path / "q.csv"
    assert main(["quench", "--config", cfg, "--save-initial", str(ck), "--out", str(out)]) == 0
    rows = [r.split(",") for r in body(out.read_text())[1:]]
    assert [float(r[0]) for r in rows] == pytest.approx([0.0, 0.1, 0.2])
    assert float(rows[0][3]) == pytest.approx(0.0, abs=1e-12)
    assert float(rows[2][3]) > 0
    out2 = tmp_path / "q2.csv"
    assert main(["quench", "--config", cfg, "--initial", str(ck), "--out", str(out2)]) == 0
    assert body(out2.read_text()) == body(out.read_text())


def test_quench_without_block_is_a_config_error(tmp_path, capsys):
    assert main(["quench", "--set", "n=1"]) == 2
    assert "quench block missing" in capsys.readouterr().err


def test_scaling_reports_fits(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["scaling", "--sizes", "1,2,3", "--set", "h=1.0", "--set", "tol=1e-7", "--out", str(out)]) == 0
    text = out.read_text()
    assert len(body(text)) == 4
    assert any(line.startswith("kappa_tilde=") for line in footer(text))
    assert main(["scaling", "--sizes", "1,2"]) == 2


def test_oracle_tables(capsys):
    assert main(["oracle", "ising", "--h", "0,1"]) == 0
    rows = body(capsys.readouterr().out)
    assert float(rows[1].split(",")[1]) == pytest.approx(-1.0)
    assert float(rows[2].split(",")[1]) == pytest.approx(-4 / np.pi)
    assert main(["oracle", "heisenberg"]) == 0
    assert float(body(capsys.readouterr().out)[1]) == pytest.approx(1 - 4 * np.log(2))
    assert main(["oracle", "quench", "--t-max", "0.2", "--dt", "0.1"]) == 0
    text = capsys.readouterr().out
    assert len(body(text)) == 4
    assert any(line.startswith("critical_times: 0.8438") for line in footer(text))
