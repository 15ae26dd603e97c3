import json
import subprocess
import sys

import pytest

from selfref.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    return code, json.loads(lines[0])


@pytest.fixture
def config_file(tiny_cfg, tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(tiny_cfg.replace(pt_steps=500, ft_steps=300, task="reach_tr").to_dict()))
    return path


def test_mab(capsys, tmp_path):
    code, out = run_cli(capsys, "mab", "--seeds", "2", "--horizon", "50", "--out", str(tmp_path / "mab"))
    assert code == 0 and set(out["final_regret"]) == {"random", "exp_avg_0", "exp_avg_0.1", "exp_avg_0.9",
                                                       "counts_regression"}
    assert (tmp_path / "mab" / "regret.csv").exists()


def test_full_pipeline(capsys, config_file, tmp_path):
    pt, ft, d = (str(tmp_path / x) for x in ("pt", "ft", "d"))
    code, out = run_cli(capsys, "pretrain", "--config", str(config_file), "--out", pt)
    assert code == 0 and out["steps"] == 500 and out["out"] == pt
    code, out = run_cli(capsys, "finetune", "--config", str(config_file), "--from", pt, "--out", ft)
    assert code == 0 and out["phase"] == "ft" and "final_eval_return" in out
    code, out = run_cli(capsys, "distill", "--config", str(config_file), "--from", ft, "--out", d)
    assert code == 0 and {"mse_holdout", "mean_abs_diff", "return_ratio", "epochs", "final_lr"} <= set(out)
    code, out = run_cli(capsys, "eval", "--from", ft, "--episodes", "1", "--out", str(tmp_path / "ev"))
    assert code == 0 and out["phase"] == "ft" and 0.0 <= out["coverage"] <= 1.0
    code, out = run_cli(capsys, "metrics", "--runs", str(tmp_path))
    assert code == 2 and "expert" in out["error"]


def test_bad_config_reports_error(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"nope": 1}))
    code, out = run_cli(capsys, "pretrain", "--config", str(path), "--out", str(tmp_path / "x"))
    assert code == 2 and "nope" in out["error"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "selfref", "mab", "--seeds", "1", "--horizon", "10", "--out",
                           str(tmp_path)], capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["out"].endswith("regret.csv")
