import json
from pathlib import Path

import numpy as np
import pytest

from selfref import checkpoint
from selfref.envs import PointMassMaze
from selfref.harness import (CSV_HEADER, CheckpointMismatch, SelfRefSystem, collect_metrics, evaluate, load_system,
                             run_distill, run_eval, run_finetune, run_pretrain, save_checkpoint)


def test_no_sr_run_never_retrieves(tiny_cfg):
    res = run_pretrain(tiny_cfg.replace(sr_enabled=False), trace=True)
    c = res["result"].counters
    assert c["act"] == 900
    assert c["query"] == c["knn"] == c["expand"] == c["window_append"] == 0
    assert set(res["result"].trace) == {"act"}
    assert res["summary"]["window_size"] == 0


def test_zero_pt_steps_checkpoint_is_initialisation(tiny_cfg):
    res = run_pretrain(tiny_cfg.replace(pt_steps=0))
    arrays, meta = checkpoint.load(res["summary"]["checkpoint"])
    fresh = SelfRefSystem(tiny_cfg).to_arrays()
    assert set(arrays) - {"replay/obs"} == set(fresh)
    for k, v in fresh.items():
        np.testing.assert_array_equal(arrays[k], v)
    assert meta["phase"] == "pt" and meta["config"]["pt_steps"] == 0


def test_same_seed_same_bytes(tiny_cfg, tmp_path):
    a = run_pretrain(tiny_cfg, out=tmp_path / "a")
    b = run_pretrain(tiny_cfg, out=tmp_path / "b")
    for name in ("metrics.csv", "checkpoint.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = run_pretrain(tiny_cfg.replace(seed=1), out=tmp_path / "c")
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() != (tmp_path / "c" / "checkpoint.bin").read_bytes()


def test_metrics_csv_layout(tiny_cfg):
    run_pretrain(tiny_cfg)
    lines = (Path(tiny_cfg.out) / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    steps = [int(row.split(",")[0]) for row in lines[1:]]
    assert steps == list(range(100, 901, 100))
    assert all(row.split(",")[-1] == "" for row in lines[1:])


def test_per_step_event_ordering(tiny_cfg):
    res = run_pretrain(tiny_cfg, trace=True)
    trace = res["result"].trace
    steps, current = [], None
    for item in trace:
        if isinstance(item, tuple):
            current = [item[1]]
            steps.append(current)
        else:
            current.append(item)
    assert len(steps) == 900
    H = PointMassMaze().horizon
    for row in steps:
        t, events = row[0], row[1:]
        appended = events[-1] == "window_append"
        core = events[:-1] if appended else events
        assert appended == ((t + 1) % H == 0)
        assert core in (["query", "act"], ["query", "knn", "expand", "act"])
        if t >= H:
            assert core == ["query", "knn", "expand", "act"]
    c = res["result"].counters
    assert c["current_episode_retrievals"] == 0
    assert c["knn"] == c["expand"] == 900 - H
    assert c["window_append"] == 2 and res["summary"]["window_size"] == 800


@pytest.mark.parametrize("strategy,tag", [("random_sample", "random"), ("noise_reference", None),
                                          ("current_state", "knn")])
def test_ablation_strategies_run(tiny_cfg, strategy, tag):
    res = run_pretrain(tiny_cfg.replace(query_strategy=strategy, pt_steps=500), trace=True)
    c = res["result"].counters
    if tag is None:
        assert c["knn"] == c["random"] == c["expand"] == 0
    else:
        assert c[tag] == 100
    assert c["query_updates"] == 0


@pytest.mark.parametrize("intrinsic", ["apt_knn", "rnd"])
def test_other_intrinsics_run(tiny_cfg, intrinsic):
    res = run_pretrain(tiny_cfg.replace(intrinsic=intrinsic, pt_steps=500))
    assert np.isfinite(res["summary"]["critic_loss"])


def test_finetune_carries_window_and_freezes(tiny_cfg, tmp_path):
    pt = run_pretrain(tiny_cfg)
    pt_window = pt["system"].window.states.copy()
    ft = run_finetune(tiny_cfg.replace(task="reach_tr"), tiny_cfg.out, out=tmp_path / "ft", trace=True)
    s = ft["summary"]
    assert s["pt_window_size"] == len(pt_window)
    assert s["frozen_aggregator_delta"] == 0.0
    assert [e["step"] for e in s["evals"]] == [250, 500]
    assert all("kl_to_pt" in e for e in s["evals"])
    np.testing.assert_array_equal(ft["system"].window.states[: len(pt_window)], pt_window)
    c = ft["result"].counters
    assert c["knn"] == c["query"] == 500 and c["query_updates"] == 1
    assert c["current_episode_retrievals"] == 0
    assert min(ft["system"].window.episode_ids) >= 0 and max(ft["system"].window.episode_ids) == 2


def test_finetune_zero_steps_evaluates_pt_policy(tiny_cfg, tmp_path):
    run_pretrain(tiny_cfg)
    ft = run_finetune(tiny_cfg.replace(ft_steps=0, task="reach_tl"), tiny_cfg.out, out=tmp_path / "ft")
    pt_system, _, _ = load_system(tiny_cfg.out)
    direct, _ = evaluate(pt_system, "reach_tl", 1, tiny_cfg.seed, tag="eval.0")
    assert ft["summary"]["evals"] == [{"step": 0, "return": direct}]
    assert ft["summary"]["frozen_aggregator_delta"] == 0.0


def test_finetune_refuses_mismatched_checkpoint(tiny_cfg, tmp_path):
    run_pretrain(tiny_cfg.replace(pt_steps=0))
    with pytest.raises(CheckpointMismatch, match=r"actor\.l1\.weight"):
        run_finetune(tiny_cfg.replace(hidden=32), tiny_cfg.out, out=tmp_path / "ft")


def test_nan_saves_failure_checkpoint(tiny_cfg, monkeypatch):
    from selfref.agents import DdpgAgent

    def boom(self, *args, **kwargs):
        raise FloatingPointError("critic loss is not finite")

    monkeypatch.setattr(DdpgAgent, "update", boom)
    with pytest.raises(FloatingPointError):
        run_pretrain(tiny_cfg)
    arrays, meta = checkpoint.load(f"{tiny_cfg.out}/failed")
    assert meta["failed"] and "window/meta" in arrays


def test_distill_report_schema(tiny_cfg, tmp_path):
    run_pretrain(tiny_cfg)
    run_finetune(tiny_cfg.replace(task="reach_tr"), tiny_cfg.out, out=tmp_path / "ft")
    res = run_distill(tiny_cfg.replace(task="reach_tr"), tmp_path / "ft", out=tmp_path / "d")
    assert set(res["report"]) == {"mse_holdout", "mean_abs_diff", "return_ratio", "epochs", "final_lr"}
    assert res["report"]["final_lr"] == 0.0 and res["report"]["epochs"] == 3
    assert run_eval(tmp_path / "d", episodes=1)["phase"] == "distill"


def test_distill_zero_teacher_matched(tiny_cfg, tmp_path):
    cfg = tiny_cfg.replace(distill_epochs=200, distill_batch=64)
    system = SelfRefSystem(cfg)
    for net in (system.agent.actor,):
        for p in net.parameters():
            p.data = np.zeros_like(p.data)
    rng = np.random.default_rng(0)

    class Replay:
        def valid_obs(self):
            return rng.uniform(-1, 1, (300, 4))

    save_checkpoint(tmp_path / "teacher", system, "ft", Replay())
    res = run_distill(cfg, tmp_path / "teacher", out=tmp_path / "d")
    assert res["report"]["mean_abs_diff"] <= 1e-6
    assert res["report"]["return_ratio"] == 1.0


def test_collect_metrics(tmp_path):
    def write(name, label, task, score):
        d = tmp_path / name
        d.mkdir()
        (d / "summary.json").write_text(json.dumps({"config": {"label": label, "task": task},
                                                     "final_eval_return": score}))

    write("e1", "expert", "reach_tr", 10.0)
    write("e2", "expert", "reach_tr", 10.0)
    for i, score in enumerate([5.0, 10.0, 15.0, 20.0]):
        write(f"r{i}", "sr", "reach_tr", score)
    out = collect_metrics(tmp_path)
    assert out["sr"]["iqm"] == 1.25 and out["sr"]["optimality_gap"] == 0.125
