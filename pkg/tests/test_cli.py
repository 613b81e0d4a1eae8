import json

import pytest
import yaml

from nlskam.cli import EXIT_CONFIG, EXIT_OK, OUT_ENV, csv_text, main, read_csv

BASE = {
    "truncation": {"J": 4, "D": 2, "nz_max": 4},
    "schedule": {"kind": "power2", "eta": 1.2},
    "nonlinearity": {"coeffs": {1: 0.01}, "R": 1.0},
    "gamma": 0.1,
    "norms": {"r0": 1.5, "p0": 2.0, "rho": 0.25, "delta": 0.1},
    "actions": {"rule": "power", "a": 0.5},
    "frequencies": {"seed": 3, "samples": 500, "lmax": 6},
    "kam": {"tol": 1.0e-12, "max_steps": 6},
}


def write_cfg(tmp_path, name="run.yaml", **over):
    cfg = json.loads(json.dumps(BASE))
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    cfg.setdefault("output", str(tmp_path / "out"))
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", str(write_cfg(tmp_path))]) == EXIT_OK
    assert "J: 4" in capsys.readouterr().out


def test_validate_rejects_eta(tmp_path, capsys):
    assert main(["validate", str(write_cfg(tmp_path, schedule={"eta": 3}))]) == EXIT_CONFIG
    assert "eta must lie in (1,2]" in capsys.readouterr().err


def test_validate_rejects_small_i_star(tmp_path, capsys):
    assert main(["validate", str(write_cfg(tmp_path, schedule={"i_star": 5}))]) == EXIT_CONFIG
    assert "i_star" in capsys.readouterr().err


def test_malformed_yaml_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("truncation: {J: 4\ngamma: [\n")
    assert main(["validate", str(p)]) == EXIT_CONFIG
    assert "line" in capsys.readouterr().err


def test_kam_run_linear_single_row(tmp_path):
    cfg = write_cfg(tmp_path, nonlinearity={"coeffs": {}})
    assert main(["kam", "run", "--config", str(cfg)]) == EXIT_OK
    header, rows = read_csv(tmp_path / "out" / "trace.csv")
    assert header[:2] == ["n", "eps"]
    assert len(rows) == 1 and float(rows[0][1]) == 0.0


def test_kam_synthesize_report_pipeline(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["kam", "run", "--config", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    _, rows = read_csv(out / "trace.csv")
    eps = [float(r[1]) for r in rows]
    assert eps[-1] < 1e-12 and eps == sorted(eps, reverse=True)
    assert main(["synthesize", "--run", str(out), "--nt", "129", "--nx", "32"]) == EXIT_OK
    _, res = read_csv(out / "residual.csv")
    assert float(res[0][4]) < 1e-4
    assert main(["report", str(out), "--out", str(tmp_path / "rep")]) == EXIT_OK
    _, summ = read_csv(tmp_path / "rep" / "summary.csv")
    assert {r[0] for r in summ} == {"kam", "residual"}


def test_measure_deterministic_and_monotone(tmp_path, capsys):
    args = ["measure", "--gamma", "0.2", "0.1", "0.05", "--J", "4", "--samples", "400", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "m")]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(args) == EXIT_OK
    assert capsys.readouterr().out == first
    assert (tmp_path / "m" / "measure.csv").read_text() == first
    assert main(["report", str(tmp_path / "m"), "--out", str(tmp_path / "rep")]) == EXIT_OK
    _, rows = read_csv(tmp_path / "rep" / "measure_vs_gamma.csv")
    assert len(rows) == 3
    frac = [float(r[1]) for r in rows]
    assert frac == sorted(frac, reverse=True)


def test_checksum_detects_tampering(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text(csv_text(["a"], [(1.5,)]))
    assert read_csv(p)[1] == [["1.5"]]
    p.write_text(p.read_text().replace("1.5", "2.5"))
    with pytest.raises(ValueError, match="checksum"):
        read_csv(p)


def test_output_env_overrides_flag(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    args = ["measure", "--gamma", "0.1", "--J", "4", "--samples", "200", "--out", str(tmp_path / "flag")]
    assert main(args) == EXIT_OK
    assert (tmp_path / "env" / "measure.csv").exists()
    assert not (tmp_path / "flag").exists()
