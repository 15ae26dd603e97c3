"""Pretrain -> finetune -> distill pipeline, evaluation and the bandit study."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .agents import AgentConfig, DdpgAgent, distill, make_student, policy_kl
from .bandits import STUDY_AGENTS, make_bandit_agent, regret_curve
from .config import ConfigError, RunConfig
from .envs import CountMab, PointMassMaze
from .metrics import CoverageTracker, aggregate_metrics
from .nn import make_rng
from .optim import cosine_lr
from .replay import ReplayBuffer
from .retrieval import (ReferenceWindow, _top_k, cosine_similarities, expand_trajectories, knn_search,
                        sample_indices)
from .rewards import make_intrinsic
from .sr import PPOConfig, QueryModule, QueryRollout, deterministic_query, make_query, noise_reference, ppo_update

log = logging.getLogger(__name__)

CSV_HEADER = ["step", "episode", "intrinsic_return", "extrinsic_return", "coverage", "query_loss",
              "critic_loss", "actor_loss", "kl_to_pt", "wall_ms"]


class CheckpointMismatch(ConfigError):
    pass


@dataclass
class MetricRecord:
    step: int
    episode: int
    intrinsic_return: float | None = None
    extrinsic_return: float | None = None
    coverage: float | None = None
    query_loss: float | None = None
    critic_loss: float | None = None
    actor_loss: float | None = None
    kl_to_pt: float | None = None
    wall_ms: float | None = None

    def row(self) -> list[str]:
        return ["" if v is None else (str(v) if isinstance(v, int) else repr(float(v)))
                for v in (getattr(self, f.name) for f in fields(self))]


def write_metrics_csv(path, records) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow(rec.row())
    Path(path).write_text(buf.getvalue())


def agent_config(cfg: RunConfig, sr: bool | None = None) -> AgentConfig:
    return AgentConfig(
        state_dim=PointMassMaze.state_dim, action_dim=PointMassMaze.action_dim, hidden=cfg.hidden,
        sr=cfg.sr_enabled if sr is None else sr, model_dim=cfg.U, encoder_hidden=cfg.encoder_hidden,
        num_heads=cfg.num_heads, k=cfg.k, horizon=cfg.D, lr=cfg.lr, gamma=cfg.gamma, tau=cfg.tau,
        n_step=cfg.n_step, stddev=cfg.stddev, stddev_clip=cfg.stddev_clip,
    )


class SelfRefSystem:
    """Everything learnable or retrievable in one run: agent, query module, window."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.agent = DdpgAgent(agent_config(cfg), cfg.seed)
        if cfg.zero_reference_inputs:
            self.agent.zero_reference_inputs()
        ppo = PPOConfig(clip=cfg.ppo_clip, gae_lambda=cfg.gae_lambda, gamma=cfg.gamma, epochs=cfg.ppo_epochs,
                        minibatches=cfg.ppo_minibatches, lr=cfg.ppo_lr, identity_coef=cfg.identity_coef)
        self.query = QueryModule(PointMassMaze.state_dim, cfg.query_hidden, cfg.seed, cfg.query_log_std_init, ppo)
        self.window = ReferenceWindow(cfg.window, PointMassMaze.state_dim, episode_length=None)
        self.noise_rng = make_rng(cfg.seed, "noise_reference")
        self.rand_rng = make_rng(cfg.seed, "random_sample")

    @property
    def sr(self) -> bool:
        return self.cfg.sr_enabled

    # ------------------------------------------------------------ retrieval
    def retrieve(self, decision, counters: Counter | None = None, trace: list | None = None) -> np.ndarray | None:
        """Flat (k*D, S) retrieved states for a knn/random decision, or None in warm-up."""
        cfg = self.cfg
        if decision.mode == "noise" or len(self.window) < cfg.k:
            return None
        if decision.mode == "knn":
            idx = knn_search(self.window, decision.query, cfg.k, cfg.metric)
            tag = "knn"
        else:
            idx = sample_indices(self.window, cfg.k, self.rand_rng)
            tag = "random"
        if counters is not None:
            counters[tag] += 1
        if trace is not None:
            trace.append(tag)
        retrieved = expand_trajectories(self.window, idx, cfg.D)
        if counters is not None:
            counters["expand"] += 1
            counters["retrieved_episode_max"] = max(counters["retrieved_episode_max"],
                                                    int(self.window.episode_ids[idx].max()))
        if trace is not None:
            trace.append("expand")
        return retrieved.flat_states()

    def reference_for(self, obs, retrieved, decision) -> np.ndarray | None:
        if not self.sr:
            return None
        if decision is not None and decision.mode == "noise":
            return noise_reference(self.cfg.U, self.noise_rng)[None, :]
        return self.agent.actor_reference(obs, retrieved)

    def greedy_action(self, obs) -> np.ndarray:
        """Noise-free action with a deterministic query; used for evaluation."""
        if not self.sr:
            return self.agent.act(obs)
        decision = deterministic_query(self.query, self.cfg.query_strategy, obs)
        retrieved = self.retrieve(decision)
        return self.agent.act(obs, self.reference_for(obs, retrieved, decision))

    def greedy_actions(self, states: np.ndarray) -> np.ndarray:
        """Batched :meth:`greedy_action` over many states."""
        states = np.asarray(states, dtype=np.float64)
        if not self.sr:
            with T.no_grad():
                return self.agent.actor(states).data
        cfg = self.cfg
        if cfg.query_strategy == "noise_reference" or len(self.window) < cfg.k:
            refs = (noise_reference(cfg.U, self.noise_rng, len(states)) if cfg.query_strategy == "noise_reference"
                    else np.zeros((len(states), cfg.U)))
            with T.no_grad():
                return self.agent.actor(states, refs).data
        if cfg.query_strategy == "learned":
            with T.no_grad():
                queries = self.query.mean(states).data
        else:
            queries = states
        out = np.empty((len(states), PointMassMaze.action_dim))
        for lo in range(0, len(states), 256):
            chunk = states[lo : lo + 256]
            retrieved = np.stack([self._flat_retrieval(q) for q in queries[lo : lo + 256]])
            with T.no_grad():
                u = self.agent.actor.reference(chunk, retrieved, None)
                out[lo : lo + 256] = self.agent.actor(chunk, u).data
        return out

    def _flat_retrieval(self, query) -> np.ndarray:
        cfg = self.cfg
        if cfg.query_strategy == "random_sample":
            idx = sample_indices(self.window, cfg.k, self.rand_rng)
        elif cfg.metric == "cosine":
            idx = _top_k(cosine_similarities(self.window, query), min(cfg.k, len(self.window)))
        else:
            idx = knn_search(self.window, query, cfg.k, cfg.metric)
        return expand_trajectories(self.window, idx, cfg.D).flat_states()

    # ------------------------------------------------------------ persistence
    def to_arrays(self, replay: ReplayBuffer | None = None) -> dict[str, np.ndarray]:
        arrays = {f"agent.{k}": v for k, v in self.agent.state_arrays().items()}
        arrays.update({f"query.{k}": v for k, v in self.query.state_dict().items()})
        arrays.update(self.window.to_arrays())
        if replay is not None:
            arrays["replay/obs"] = replay.valid_obs().copy()
        return arrays

    def expected_shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.to_arrays().items() if not k.startswith(("window/", "replay/"))}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        want = self.expected_shapes()
        have = {k: v.shape for k, v in arrays.items() if not k.startswith(("window/", "replay/"))}
        diff = []
        for k in sorted(want.keys() | have.keys()):
            if want.get(k) != have.get(k):
                diff.append(f"{k}: checkpoint {have.get(k)} vs config {want.get(k)}")
        if diff:
            raise CheckpointMismatch("checkpoint does not match config:\n  " + "\n  ".join(diff))
        self.agent.load_arrays({k[len("agent."):]: v for k, v in arrays.items() if k.startswith("agent.")})
        self.query.load_state_dict({k[len("query."):]: v for k, v in arrays.items() if k.startswith("query.")})
        if self.cfg.zero_reference_inputs:
            self.agent.zero_reference_inputs()
        if "window/meta" in arrays:
            self.window = ReferenceWindow.from_arrays(arrays)


def evaluate(system: SelfRefSystem, task: str, episodes: int, seed: int, tag: str = "eval") -> tuple[float, np.ndarray]:
    """Mean noise-free return over ``episodes`` and the visited states."""
    env = PointMassMaze(task=task, seed=int(make_rng(seed, tag).integers(2**31)))
    returns, states = [], []
    for _ in range(episodes):
        obs = env.reset()
        total = 0.0
        for _ in range(env.horizon):
            states.append(obs)
            obs, r, done = env.step(system.greedy_action(obs))
            total += r
            if done:
                break
        returns.append(total)
    return float(np.mean(returns)) if returns else 0.0, np.asarray(states)


@dataclass
class PhaseResult:
    records: list
    counters: Counter
    summary: dict
    trace: list | None


class Trainer:
    """Runs one training phase (pretraining or finetuning) in place on a system."""

    def __init__(self, system: SelfRefSystem, phase: str, first_episode_id: int = 0,
                 trace: bool = False, pt_reference: SelfRefSystem | None = None):
        if phase not in ("pt", "ft"):
            raise ValueError(f"phase must be 'pt' or 'ft', got {phase!r}")
        cfg = system.cfg
        self.system = system
        self.cfg = cfg
        self.phase = phase
        self.pt_reference = pt_reference
        self.env = PointMassMaze(task=cfg.task, seed=int(make_rng(cfg.seed, f"{phase}.env").integers(2**31)))
        steps = cfg.pt_steps if phase == "pt" else cfg.ft_steps
        capacity = max(1, min(cfg.replay_capacity, steps))
        self.replay = ReplayBuffer(capacity, PointMassMaze.state_dim, PointMassMaze.action_dim, self.env.horizon,
                                   cfg.n_step, cfg.gamma, slots=cfg.k * cfg.D if system.sr and cfg.query_strategy != "noise_reference" else 0)
        self.intrinsic = make_intrinsic(cfg.intrinsic, PointMassMaze.state_dim, cfg.seed,
                                        window=system.window if system.sr else None, grid=cfg.grid)
        self.sample_rng = make_rng(cfg.seed, f"{phase}.replay")
        self.seed_rng = make_rng(cfg.seed, f"{phase}.seed_actions")
        system.agent.noise_rng = make_rng(cfg.seed, f"{phase}.agent.noise")
        system.query.rng = make_rng(cfg.seed, f"{phase}.query.sample")
        self.episode_id = first_episode_id
        self.counters: Counter = Counter()
        self.trace: list | None = [] if trace else None
        self.coverage = CoverageTracker(cfg.grid)
        self.rollout = QueryRollout()
        self.last = {"query_loss": None, "critic_loss": None, "actor_loss": None, "kl_to_pt": None,
                     "intrinsic_return": None, "extrinsic_return": None}
        self.evals: list[dict] = []
        self.window_appends: list[int] = []
        # filled only when tracing
        self.actions: list[np.ndarray] = []
        self.losses: list[dict] = []

    def _reward_fn(self):
        return self.intrinsic.reward if self.phase == "pt" else None

    def _update(self) -> None:
        cfg = self.cfg
        idx = self.replay.sample_indices(cfg.batch_size, self.sample_rng)
        batch = self.replay.batch(idx, self._reward_fn())
        noise = next_noise = None
        if self.system.sr and cfg.query_strategy == "noise_reference":
            noise = noise_reference(cfg.U, self.system.noise_rng, len(batch))
            next_noise = noise_reference(cfg.U, self.system.noise_rng, len(batch))
        if self.phase == "pt":
            self.intrinsic.update(batch.next_obs)
        losses = self.system.agent.update(batch, noise, next_noise)
        self.last.update(losses)
        if self.trace is not None:
            self.losses.append(losses)
        self.counters["agent_updates"] += 1

    def run(self, steps: int, stop=None) -> PhaseResult:
        """Run up to ``steps`` environment steps.

        ``stop(step, trainer)`` is polled after every step; a true result ends
        the phase early.
        """
        cfg, system, env = self.cfg, self.system, self.env
        sr = system.sr
        start = time.perf_counter()
        records: list[MetricRecord] = []
        obs = env.reset()
        self.coverage.add(obs)
        episode_states = [obs]
        ep_in, ep_ex = 0.0, 0.0
        episode_index = 0
        done_steps = 0
        for t in range(steps):
            decision = retrieved = ref = None
            if sr:
                decision = make_query(system.query, cfg.query_strategy, obs, episode_index, self.phase)
                self.counters["query"] += 1
                if self.trace is not None:
                    self.trace.append(("step", t))
                    self.trace.append("query")
                retrieved = system.retrieve(decision, self.counters, self.trace)
                if retrieved is not None and self.counters["retrieved_episode_max"] >= self.episode_id:
                    self.counters["current_episode_retrievals"] += 1
                ref = system.reference_for(obs, retrieved, decision)
            if t < cfg.seed_frames:
                action = self.seed_rng.uniform(-1.0, 1.0, size=PointMassMaze.action_dim)
            else:
                action = system.agent.act(obs, ref, explore=True)
            self.counters["act"] += 1
            if self.trace is not None:
                self.trace.append("act")
                self.actions.append(action)
            next_obs, r_ext, done = env.step(action)
            r_int = float(self.intrinsic.reward(next_obs))
            self.intrinsic.observe(next_obs)
            self.coverage.add(next_obs)
            stored = r_ext if self.phase == "ft" else 0.0
            self.replay.add(obs, action, stored, next_obs, env.t - 1, retrieved)
            if decision is not None and decision.trainable:
                self.rollout.add(obs, decision.query, decision.logprob, r_int if self.phase == "pt" else r_ext)
            ep_in += r_int
            ep_ex += r_ext
            obs = next_obs
            episode_states.append(obs)
            if done:
                self._end_episode(np.asarray(episode_states[:-1]), obs, t)
                self.last["intrinsic_return"], self.last["extrinsic_return"] = ep_in, ep_ex
                episode_index += 1
                self.episode_id += 1
                obs = env.reset()
                self.coverage.add(obs)
                episode_states = [obs]
                ep_in = ep_ex = 0.0
            if t >= cfg.seed_frames and t % cfg.update_every == 0:
                self._update()
            if self.phase == "ft" and (t + 1) % cfg.eval_every == 0:
                self._evaluate(t + 1)
            if (t + 1) % cfg.log_every == 0:
                records.append(self._record(t + 1, episode_index, start))
            done_steps = t + 1
            if stop is not None and stop(done_steps, self):
                break
        summary = {
            "phase": self.phase,
            "steps": done_steps,
            "episodes": episode_index,
            "coverage": self.coverage.value,
            "counters": dict(self.counters),
            "window_size": len(system.window),
            "window_appends": len(self.window_appends),
            "evals": self.evals,
            "wall_seconds": time.perf_counter() - start,
        }
        summary.update({k: v for k, v in self.last.items()})
        return PhaseResult(records, self.counters, summary, self.trace)

    def _end_episode(self, states: np.ndarray, final_obs: np.ndarray, t: int) -> None:
        system = self.system
        if system.sr:
            if (t + 1) % self.env.horizon != 0:
                raise RuntimeError("window append away from an episode boundary")
            system.window.append_states(states, self.episode_id)
            self.window_appends.append(t + 1)
            self.counters["window_append"] += 1
            if self.trace is not None:
                self.trace.append("window_append")
            if len(self.rollout):
                self.rollout.final_state = final_obs
                stats = ppo_update(system.query, self.rollout)
                self.last["query_loss"] = stats["query_loss"]
                self.counters["query_updates"] += 1
            self.rollout.clear()

    def _evaluate(self, step: int) -> None:
        cfg = self.cfg
        ret, states = evaluate(self.system, cfg.task, cfg.eval_episodes, cfg.seed, tag=f"eval.{step}")
        entry = {"step": step, "return": ret}
        if self.pt_reference is not None and len(states):
            stride = max(1, len(states) // cfg.kl_states)
            sub = states[::stride][: cfg.kl_states]
            kl = policy_kl(self.system.greedy_actions(sub), self.pt_reference.greedy_actions(sub), cfg.kl_sigma)
            entry["kl_to_pt"] = kl
            self.last["kl_to_pt"] = kl
        self.evals.append(entry)

    def _record(self, step: int, episode: int, start: float) -> MetricRecord:
        wall = (time.perf_counter() - start) * 1000.0 if self.cfg.record_wall_time else None
        return MetricRecord(step, episode, self.last["intrinsic_return"], self.last["extrinsic_return"],
                            self.coverage.value, self.last["query_loss"], self.last.get("critic_loss"),
                            self.last.get("actor_loss"), self.last["kl_to_pt"], wall)


# ---------------------------------------------------------------- checkpoint io


def _rng_states(system: SelfRefSystem) -> dict:
    return {
        "agent_noise": system.agent.noise_rng.bit_generator.state,
        "query_sample": system.query.rng.bit_generator.state,
        "noise_reference": system.noise_rng.bit_generator.state,
        "random_sample": system.rand_rng.bit_generator.state,
    }


def save_checkpoint(out: Path, system: SelfRefSystem, phase: str, replay: ReplayBuffer | None,
                    extra: dict | None = None) -> Path:
    meta = {"phase": phase, "config": system.cfg.to_dict(), "rng": _rng_states(system),
            "maze": PointMassMaze().c.as_dict()}
    meta.update(extra or {})
    return checkpoint.save(out / "checkpoint.bin", system.to_arrays(replay), meta)


def load_system(ckpt, cfg: RunConfig | None = None) -> tuple[SelfRefSystem, dict, dict]:
    arrays, meta = checkpoint.load(ckpt)
    if cfg is None:
        if "config" not in meta:
            raise ConfigError(f"{ckpt}: no sidecar config; pass --config")
        cfg = RunConfig.from_dict(meta["config"])
    system = SelfRefSystem(cfg)
    system.load_arrays(arrays)
    return system, arrays, meta


def _write_outputs(out: Path, result: PhaseResult, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", result.records)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- entry points


def run_pretrain(cfg: RunConfig, out=None, trace: bool = False, stop=None) -> dict:
    cfg.validate()
    out = Path(out or cfg.out)
    system = SelfRefSystem(cfg)
    trainer = Trainer(system, "pt", trace=trace)
    try:
        result = trainer.run(cfg.pt_steps, stop)
    except FloatingPointError:
        save_checkpoint(out / "failed", system, "pt", trainer.replay, {"failed": True})
        raise
    save_checkpoint(out, system, "pt", trainer.replay, {"next_episode_id": trainer.episode_id})
    summary = {"config": cfg.to_dict(), "maze": PointMassMaze().c.as_dict(), **result.summary,
               "checkpoint": str(out / "checkpoint.bin")}
    _write_outputs(out, result, summary)
    return {"summary": summary, "system": system, "trainer": trainer, "result": result}


def run_finetune(cfg: RunConfig, pt_checkpoint, out=None, trace: bool = False) -> dict:
    cfg.validate()
    out = Path(out or cfg.out)
    system, arrays, meta = load_system(pt_checkpoint, cfg)
    pt_window_size = len(system.window)
    pt_reference, _, _ = load_system(pt_checkpoint, cfg)
    system.agent.freeze_critic_aggregator()
    frozen_before = ({k: p.data.copy() for k, p in system.agent.critic.aggregator.named_parameters()}
                     if system.sr else {})
    trainer = Trainer(system, "ft", first_episode_id=int(meta.get("next_episode_id", 0)), trace=trace,
                      pt_reference=pt_reference)
    if cfg.ft_steps == 0:
        ret, _ = evaluate(system, cfg.task, cfg.eval_episodes, cfg.seed, tag="eval.0")
        trainer.evals.append({"step": 0, "return": ret})
    try:
        result = trainer.run(cfg.ft_steps)
    except FloatingPointError:
        save_checkpoint(out / "failed", system, "ft", trainer.replay, {"failed": True})
        raise
    frozen_delta = 0.0
    if system.sr:
        for k, p in system.agent.critic.aggregator.named_parameters():
            frozen_delta += float(np.sum(np.abs(p.data - frozen_before[k])))
    evals = trainer.evals
    save_checkpoint(out, system, "ft", trainer.replay, {"next_episode_id": trainer.episode_id})
    summary = {"config": cfg.to_dict(), "maze": PointMassMaze().c.as_dict(), **result.summary,
               "evals": evals, "final_eval_return": evals[-1]["return"] if evals else None,
               "pt_window_size": pt_window_size, "frozen_aggregator_delta": frozen_delta,
               "checkpoint": str(out / "checkpoint.bin")}
    _write_outputs(out, result, summary)
    return {"summary": summary, "system": system, "trainer": trainer, "result": result}


def run_distill(cfg: RunConfig, ft_checkpoint, out=None) -> dict:
    cfg.validate()
    out = Path(out or cfg.out)
    teacher, arrays, _ = load_system(ft_checkpoint, cfg)
    states = arrays.get("replay/obs")
    if states is None or len(states) == 0:
        raise ConfigError(f"{ft_checkpoint}: checkpoint has no replay states to distil from")
    perm = make_rng(cfg.seed, "distill.split").permutation(len(states))
    n_hold = max(1, len(states) // 10)
    hold, train = states[perm[:n_hold]], states[perm[n_hold:]]
    teacher_train = teacher.greedy_actions(train)
    teacher_hold = teacher.greedy_actions(hold)
    student = make_student(teacher.agent.cfg, cfg.seed)
    student, trace = distill(train, teacher_train, student, cfg.distill_epochs, cfg.distill_lr,
                             cfg.distill_batch, cfg.distill_sigma, cfg.seed)
    with T.no_grad():
        student_hold = student(hold).data
    diff = student_hold - teacher_hold
    student_system = SelfRefSystem(cfg.replace(sr_enabled=False))
    student_system.agent.actor = student
    teacher_ret, _ = evaluate(teacher, cfg.task, cfg.eval_episodes, cfg.seed, tag="distill.eval")
    student_ret, _ = evaluate(student_system, cfg.task, cfg.eval_episodes, cfg.seed, tag="distill.eval")
    report = {
        "mse_holdout": float(np.mean(diff * diff)),
        "mean_abs_diff": float(np.mean(np.abs(diff))),
        "return_ratio": return_ratio(student_ret, teacher_ret),
        "epochs": cfg.distill_epochs,
        "final_lr": cosine_lr(cfg.distill_lr, cfg.distill_epochs, cfg.distill_epochs),
    }
    meta = {"phase": "distill", "config": cfg.to_dict(), "teacher_return": teacher_ret,
            "student_return": student_ret}
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "checkpoint.bin", {f"student.{k}": v for k, v in student.state_dict().items()}, meta)
    summary = {"config": cfg.to_dict(), "report": report, "loss_trace": trace,
               "teacher_return": teacher_ret, "student_return": student_ret}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {"report": report, "summary": summary, "student": student, "teacher": teacher}


def return_ratio(student_return: float, teacher_return: float) -> float:
    if teacher_return > 0:
        return float(student_return / teacher_return)
    return 1.0 if student_return >= teacher_return else 0.0


def run_eval(ckpt, episodes: int | None = None, task: str | None = None) -> dict:
    arrays, meta = checkpoint.load(ckpt)
    cfg = RunConfig.from_dict(meta["config"])
    if task:
        cfg = cfg.replace(task=task)
    if meta.get("phase") == "distill":
        system = SelfRefSystem(cfg.replace(sr_enabled=False))
        system.agent.actor = make_student(system.agent.cfg, cfg.seed)
        system.agent.actor.load_state_dict({k[len("student."):]: v for k, v in arrays.items()})
    else:
        system = SelfRefSystem(cfg)
        system.load_arrays(arrays)
    ret, states = evaluate(system, cfg.task, episodes or cfg.eval_episodes, cfg.seed, tag="cli.eval")
    from .metrics import coverage

    return {"phase": meta.get("phase"), "task": cfg.task, "mean_return": ret, "coverage": coverage(states, cfg.grid)}


def run_mab_study(seeds: int = 10, horizon: int = 1000, num_arms: int = 10, noise_std: float = 10.0,
                  epsilon: float = 0.1, agents=STUDY_AGENTS, out=None) -> dict:
    """Cumulative regret curves (mean and standard error over seeds) per agent."""
    curves: dict[str, np.ndarray] = {}
    for name in agents:
        per_seed = []
        for seed in range(seeds):
            env = CountMab(num_arms, noise_std, seed=int(make_rng(seed, "mab.env").integers(2**31)))
            agent = make_bandit_agent(name, num_arms, epsilon)
            rng = make_rng(seed, f"mab.agent.{name}")
            arms, rewards = [], []
            for _ in range(horizon):
                arm = agent.select(rng)
                r = env.pull(arm)
                agent.update(arm, r)
                arms.append(arm)
                rewards.append(r)
            per_seed.append(regret_curve(arms, rewards, num_arms))
        curves[name] = np.asarray(per_seed)
    result = {
        name: {
            "mean": c.mean(axis=0),
            "stderr": c.std(axis=0, ddof=1) / np.sqrt(len(c)) if len(c) > 1 else np.zeros(c.shape[1]),
            "final": c[:, -1],
            "curves": c,
        }
        for name, c in curves.items()
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step"] + [f"{n}_{s}" for n in result for s in ("mean", "stderr")])
        for t in range(horizon):
            w.writerow([t + 1] + [repr(float(result[n][s][t])) for n in result for s in ("mean", "stderr")])
        (out / "regret.csv").write_text(buf.getvalue())
    return result


def collect_metrics(runs_dir) -> dict:
    """Aggregate finetune summaries under ``runs_dir`` against runs labelled 'expert'."""
    expert: dict[str, list[float]] = {}
    groups: dict[str, dict[str, list[float]]] = {}
    for path in sorted(Path(runs_dir).rglob("summary.json")):
        s = json.loads(path.read_text())
        score = s.get("final_eval_return")
        if score is None:
            continue
        cfg = s["config"]
        if cfg.get("label") == "expert":
            expert.setdefault(cfg["task"], []).append(score)
        else:
            groups.setdefault(cfg.get("label") or "default", {}).setdefault(cfg["task"], []).append(score)
    expert_mean = {t: float(np.mean(v)) for t, v in expert.items()}
    for label, scores in groups.items():
        for task in scores:
            if expert_mean.get(task, 0.0) <= 0.0:
                raise ConfigError(f"{runs_dir}: no positive expert score for task {task!r} (label runs 'expert')")
    return {label: aggregate_metrics(scores, expert_mean) for label, scores in groups.items()}
