import json

import pytest

from capfoil.cli import ConfigError, DEFAULTS, config_hash, load_config, main, resolve_config


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _small(**model):
    return {
        "model": {"n": 3, **model},
        "discretization": {"L": 4},
        "experiment": {"rho": 10, "rhos": {"start": 10, "stop": 40, "count": 4}},
    }


def _body(path):
    return path.read_text().splitlines()[1:]


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == 0
    out, err = capsys.readouterr()
    assert json.loads(out) == json.loads(json.dumps(DEFAULTS))
    assert "model.n" in err


def test_missing_required_field(tmp_path, capsys):
    code = main(["solve", "--config", _write(tmp_path, {"model": {"sigma": 0.1}}), "--out", str(tmp_path)])
    assert code == 2
    assert "model.n" in capsys.readouterr().err


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="sigmaa"):
        resolve_config({"model": {"n": 3, "sigmaa": 0.1}})


def test_bad_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"model": {"n": 3,}}')
    with pytest.raises(ConfigError, match="line 1"):
        load_config(str(p))


def test_config_hash_is_canonical():
    a = resolve_config({"model": {"n": 3, "sigma": 0.2}})
    b = resolve_config({"model": {"sigma": 0.2, "n": 3}})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(resolve_config({"model": {"n": 3}}))


def test_verify_dtn_run(tmp_path):
    cfg = {"model": {"n": 3}, "discretization": {"L": 6}}
    assert main(["verify-dtn", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    run = next(tmp_path.glob("verify-dtn-*"))
    summary = json.loads((run / "summary.json").read_text())
    assert summary["checks"]["criterion_1_dtn_spectrum"]["status"] == "pass"
    assert (run / "dtn.csv").read_text().startswith("# capfoil")


def test_solve_is_deterministic(tmp_path):
    cfg = _write(tmp_path, _small(sigma=0.1, h_amplitude=0.1))
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    files = [next(o.glob("solve-*")) / "solve.csv" for o in outs]
    assert _body(files[0]) == _body(files[1])


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    spec = _small(sigma=0.1, h_amplitude=0.1)
    spec["experiment"]["warm_start"] = False
    cfg = _write(tmp_path, spec)
    bodies = []
    for threads in ("1", "3"):
        monkeypatch.setenv("CAPFOIL_THREADS", threads)
        out = tmp_path / f"t{threads}"
        main(["sweep", "--config", cfg, "--out", str(out)])
        bodies.append(_body(next(out.glob("sweep-*")) / "sweep.csv"))
    assert bodies[0] == bodies[1]


def test_flat_sweep_is_rigid(tmp_path):
    cfg = _write(tmp_path, _small())
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == 0
    summary = json.loads((next(tmp_path.glob("sweep-*")) / "summary.json").read_text())
    assert summary["passed"]
