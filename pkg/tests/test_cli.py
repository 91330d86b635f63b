import json
import subprocess
import sys

import pytest

from poperl.cli import EXIT_CODES, _seed_range, main


def test_seed_range():
    assert _seed_range("0..4") == [0, 1, 2, 3, 4]
    assert _seed_range("3,5") == [3, 5]


def test_verify_prop(tmp_path, capsys):
    out = tmp_path / "res.csv"
    assert main(["verify-prop", "--instances", "20", "--seed", "1", "--csv", str(out)]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    assert len(out.read_text().splitlines()) == 21


def test_verify_prop_failure_exit_code(capsys):
    assert main(["verify-prop", "--instances", "5", "--tol", "-1"]) == EXIT_CODES["check_failed"]


def test_bad_config_reports_category(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("algorithm: no_pop\nbuffer_mode: dual(0.5)\n")
    code = main(["train", "--config", str(cfg)])
    err = json.loads(capsys.readouterr().err.strip())
    assert code == EXIT_CODES["config"] and err["error"] == "config"
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CODES["config"]


def test_train_and_export_with_env_override(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("algorithm: erl_always\nenv: ridge-1d\npopulation_size: 3\nparents_k: 2\n"
                   "total_training_steps: 150\nbatch_size: 16\nactor_hidden: [8]\ncritic_hidden: [8]\n"
                   "run_name: demo\noutput_dir: nowhere\n")
    monkeypatch.setenv("POPERL_OUTPUT_DIR", str(tmp_path / "out"))
    assert main(["train", "--config", str(cfg), "--seeds", "0..1"]) == 0
    run_dir = tmp_path / "out" / "demo"
    for s in (0, 1):
        assert (run_dir / f"seed_{s}" / "run.csv").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1]
    before = (run_dir / "aggregate_target_eval_return.csv").read_bytes()
    assert main(["export", "--run-dir", str(run_dir)]) == 0
    assert (run_dir / "aggregate_target_eval_return.csv").read_bytes() == before
    assert main(["export", "--run-dir", str(tmp_path / "nope")]) == EXIT_CODES["config"]


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "poperl.cli", "verify-prop", "--instances", "3"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "PASS" in r.stdout


@pytest.mark.parametrize("name", ["pointmass_no_pop.yaml", "pointmass_erl_always_dual.yaml"])
def test_shipped_configs_parse(name):
    from pathlib import Path
    from poperl.harness import RunConfig
    cfg = RunConfig.from_file(Path(__file__).parent.parent / "configs" / name)
    assert cfg.total_training_steps == 50_000 and cfg.seeds == [0, 1, 2, 3, 4]
