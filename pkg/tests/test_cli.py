import json

import pytest

from cascadelab import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_hypotheses_single_verdict(capsys):
    code, out, _ = run(["hypotheses", "--which", "H1", "--rho", "0.2"], capsys)
    assert code == 0
    (v,) = json.loads(out)
    assert v["hypothesis"] == "H1" and v["pass"] is True and v["rho"] == "1/5"


def test_hypotheses_grid_json_format(capsys):
    code, out, _ = run(["hypotheses", "--which", "H1,H4", "--rho", "0..1:0.25", "--out", "json"], capsys)
    verdicts = json.loads(out)
    assert code == 0 and len(verdicts) == 10
    assert [v["pass"] for v in verdicts if v["hypothesis"] == "H4"] == [False, False, True, True, True]


def test_cancellation_test_passes(capsys):
    code, out, _ = run(["cancellation-test", "--seeds", "100"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["pass"] and doc["max_ratio_to_tolerance"] < 1


def test_malformed_config_reports_fields(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "spde": {\n    "nu": -1,\n    "bogus": 3\n  }\n}\n')
    code, _, err = run(["spde-run", "--config", str(cfg)], capsys)
    assert code == 1
    assert f"{cfg}:3: field spde.nu" in err
    assert f"{cfg}:4: field spde.bogus" in err


def test_unparseable_config_reports_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "spde": \n')
    code, _, err = run(["shell-run", "--config", str(cfg)], capsys)
    assert code == 1 and f"{cfg}:3:" in err


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["spde-run", "--no-such-flag"])
    assert exc.value.code == 1


def test_runtime_abort_exits_two(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise FloatingPointError("solver diverged")

    monkeypatch.setattr(cli.spde, "simulate", broken)
    code, _, err = run(["spde-run", "--config", str(_spde_config(tmp_path))], capsys)
    assert code == 2 and "aborted" in err


def test_invalid_combinations_exit_one(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"spde": {"state_cutoff": 2, "galerkin_N": 3}}))
    code, _, err = run(["spde-run", "--config", str(cfg)], capsys)
    assert code == 1 and "galerkin_N" in err
    code, _, err = run(["validate-constants", "--constants", str(tmp_path / "missing.json")], capsys)
    assert code == 1


def _spde_config(tmp_path):
    cfg = tmp_path / "spde.json"
    cfg.write_text(json.dumps({
        "master_seed": 7,
        "spde": {"nu": 0.5, "theta": {"N": 1, "lambda_exp": 1}, "state_cutoff": 4, "galerkin_N": 4,
                 "T": 0.005, "dt": 0.001, "trajectories": 3},
    }))
    return cfg


def test_spde_run_writes_outputs_with_one_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = run(["spde-run", "--config", str(_spde_config(tmp_path)), "--out", str(out)], capsys)
    assert code == 0
    manifest = json.loads((out / "spde-run.manifest.json").read_text())
    files = {p.name for p in out.iterdir()} - {"spde-run.manifest.json"}
    # no orphan outputs: every data file is listed in the manifest
    assert files == set(manifest["outputs"])
    assert len(manifest["seeds"]) == 3 and manifest["master_seed"] == 7
    assert manifest["truncation_loss_total"] > 0
    for key in ("config_hash", "code_revision", "started", "finished"):
        assert manifest[key]


def test_outputs_are_bit_identical_across_reruns_and_threads(tmp_path, capsys, monkeypatch):
    cfg = _spde_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["spde-run", "--config", str(cfg), "--out", str(a), "--threads", "3"]) == 0
    monkeypatch.setenv("CASCADE_THREADS", "1")
    assert cli.main(["spde-run", "--config", str(cfg), "--out", str(b)]) == 0
    capsys.readouterr()
    ma = json.loads((a / "spde-run.manifest.json").read_text())
    mb = json.loads((b / "spde-run.manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]
    for name in ma["outputs"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_master_seed_flag_changes_trajectories(tmp_path, capsys):
    cfg = _spde_config(tmp_path)
    cli.main(["spde-run", "--config", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["spde-run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--master-seed", "8"])
    capsys.readouterr()
    name = "spde-run.traj00000.csv"
    assert (tmp_path / "a" / name).read_bytes() != (tmp_path / "b" / name).read_bytes()


def test_shell_run_reports_blowup_as_data(tmp_path, capsys):
    code, out, _ = run(["shell-run", "--nshells", "30", "--a", "0", "--T", "10", "--out", str(tmp_path)], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["blowup"] is True
    header = (tmp_path / "shell-run.csv").read_text().splitlines()[0]
    assert header.startswith("t,u_0,u_1")


def test_corrector_limit_csv(capsys):
    code, out, _ = run(["corrector-limit", "--N", "4,8", "--out", "csv"], capsys)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "N,relative_error" and len(lines) == 3


def test_validate_constants(tmp_path, capsys):
    code, out, _ = run(["validate-constants", "--m", "2"], capsys)
    assert code == 0 and json.loads(out)["ok"]
    bad = tmp_path / "alpha.json"
    bad.write_text(json.dumps({"m": 1, "entries": [{"i": [1, 1, 1], "mu": [0, 0, 1], "alpha": 1.0}]}))
    code, out, _ = run(["validate-constants", "--constants", str(bad)], capsys)
    assert code == 1 and not json.loads(out)["ok"]


def test_acceptance_subset(tmp_path, capsys):
    code, out, err = run(["acceptance", "--criteria", "1,7", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "PASS criterion 1" in err and "PASS criterion 7" in err
    doc = json.loads((tmp_path / "acceptance.json").read_text())
    assert [c["criterion"] for c in doc["criteria"]] == [1, 7]


def test_acceptance_json_to_stdout_with_numpy_verdicts(capsys):
    code, out, _ = run(["acceptance", "--criteria", "8,9", "--out", "json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["pass"] is True
    assert all(c["pass"] is True for c in doc["criteria"])


def test_bad_thread_env(monkeypatch, capsys):
    monkeypatch.setenv("CASCADE_THREADS", "many")
    code, _, err = run(["hypotheses", "--which", "H1", "--rho", "0.2"], capsys)
    assert code == 1 and "CASCADE_THREADS" in err
