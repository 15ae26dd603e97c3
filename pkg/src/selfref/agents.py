"""DDPG backbone with an optional Self-Reference input, plus distillation and
the policy-change metric."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module, copy_parameters, make_rng, soft_update
from .optim import Adam, cosine_lr
from .replay import Batch
from .sr import Aggregator
from .tensor import Tensor


class TrainingError(FloatingPointError):
    """A loss or gradient went non-finite."""


@dataclass
class AgentConfig:
    state_dim: int
    action_dim: int
    hidden: int = 256
    sr: bool = False
    model_dim: int = 256
    encoder_hidden: int = 256
    num_heads: int = 4
    k: int = 10
    horizon: int = 5
    lr: float = 1e-4
    gamma: float = 0.99
    tau: float = 0.01
    n_step: int = 3
    stddev: float = 0.2
    stddev_clip: float = 0.3

    @property
    def slots(self) -> int:
        return self.k * self.horizon


class IdentityEncoder(Module):
    """Observation encoder; vector states pass through unchanged."""

    def __call__(self, obs):
        return obs


class _SRNet(Module):
    """Two ReLU hidden layers; the reference vector joins at the second layer."""

    def __init__(self, n_in: int, n_out: int, cfg: AgentConfig, seed: int, name: str, final: str):
        self.l1 = Linear(n_in, cfg.hidden, make_rng(seed, f"{name}.l1"), gain=math.sqrt(2.0))
        self.l2 = Linear(cfg.hidden, cfg.hidden, make_rng(seed, f"{name}.l2"), gain=math.sqrt(2.0))
        self.l3 = Linear(cfg.hidden, n_out, make_rng(seed, f"{name}.l3"), init=final)
        self.sr = cfg.sr
        if cfg.sr:
            self.l2_ref = Linear(cfg.model_dim, cfg.hidden, make_rng(seed, f"{name}.l2_ref"),
                                 gain=math.sqrt(2.0), bias=False)
            self.aggregator = Aggregator(cfg.state_dim, cfg.model_dim, cfg.encoder_hidden, cfg.num_heads,
                                         cfg.horizon, seed, name=f"{name}.aggregator")
        self._offsets = np.tile(np.arange(cfg.horizon), cfg.k)

    def reference(self, obs, retrieved, mask) -> Tensor:
        return self.aggregator(obs, retrieved, self._offsets, mask)

    def trunk(self, x, ref) -> Tensor:
        h = T.relu(self.l1(x))
        if self.sr:
            if ref is None:
                raise ValueError("an SR network needs a reference vector")
            z = T.matmul(h, self.l2.weight) + T.linear(ref, self.l2_ref.weight) + self.l2.bias
        else:
            z = T.matmul(h, self.l2.weight) + self.l2.bias
        return self.l3(T.relu(z))


class Actor(_SRNet):
    def __init__(self, cfg: AgentConfig, seed: int, name: str = "actor"):
        super().__init__(cfg.state_dim, cfg.action_dim, cfg, seed, name, final="uniform")

    def __call__(self, obs, ref=None) -> Tensor:
        return T.tanh(self.trunk(obs, ref))


class Critic(_SRNet):
    def __init__(self, cfg: AgentConfig, seed: int, name: str = "critic"):
        super().__init__(cfg.state_dim + cfg.action_dim, 1, cfg, seed, name, final="uniform")

    def __call__(self, obs, action, ref=None) -> Tensor:
        x = T.concat([T.as_tensor(obs), T.as_tensor(action)], axis=-1)
        return T.reshape(self.trunk(x, ref), (-1,))


def _named(module: Module, prefix: str, skip=()) -> dict[str, Tensor]:
    return {f"{prefix}{k}": p for k, p in module.named_parameters() if not any(k.startswith(s) for s in skip)}


class DdpgAgent:
    def __init__(self, cfg: AgentConfig, seed: int = 0):
        self.cfg = cfg
        self.encoder = IdentityEncoder()
        self.actor = Actor(cfg, seed)
        self.critic = Critic(cfg, seed)
        self.critic_target = Critic(cfg, seed)
        copy_parameters(self.critic_target, self.critic)
        self.critic_aggregator_frozen = False
        self.reference_inputs_frozen = False
        self.noise_rng = make_rng(seed, "agent.noise")
        self._build_optimizers()

    # ------------------------------------------------------------ setup
    def _build_optimizers(self) -> None:
        skip_actor = ["l2_ref"] if self.reference_inputs_frozen else []
        skip_critic = list(skip_actor)
        if self.critic_aggregator_frozen:
            skip_critic.append("aggregator")
        old_a = getattr(self, "actor_opt", None)
        old_c = getattr(self, "critic_opt", None)
        self.actor_opt = Adam(_named(self.actor, "", skip_actor), lr=self.cfg.lr)
        self.critic_opt = Adam(_named(self.critic, "", skip_critic), lr=self.cfg.lr)
        for old, new in ((old_a, self.actor_opt), (old_c, self.critic_opt)):
            if old is not None:
                for k in new.states.keys() & old.states.keys():
                    new.states[k] = old.states[k]

    def freeze_critic_aggregator(self) -> None:
        self.critic_aggregator_frozen = True
        self._build_optimizers()

    def zero_reference_inputs(self) -> None:
        """Zero and freeze the weights that read the reference vector."""
        if not self.cfg.sr:
            return
        for net in (self.actor, self.critic, self.critic_target):
            net.l2_ref.weight.data = np.zeros_like(net.l2_ref.weight.data)
        self.reference_inputs_frozen = True
        self._build_optimizers()

    def modules(self) -> dict[str, Module]:
        return {"actor": self.actor, "critic": self.critic, "critic_target": self.critic_target}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, mod in self.modules().items():
            out.update({f"{prefix}.{k}": v for k, v in mod.state_dict().items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for prefix, mod in self.modules().items():
            sub = {k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
            mod.load_state_dict(sub)

    # ------------------------------------------------------------ acting
    def actor_reference(self, obs: np.ndarray, retrieved: np.ndarray | None) -> np.ndarray | None:
        """Actor-side reference vector for one observation (zeros if nothing retrieved)."""
        if not self.cfg.sr:
            return None
        if retrieved is None:
            return np.zeros((1, self.cfg.model_dim))
        with T.no_grad():
            return self.actor.reference(obs[None, :], retrieved[None, :, :], None).data

    def act(self, obs, reference=None, explore: bool = False, noise=None) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if self.cfg.sr and reference is None:
            raise ValueError("SR agent needs a reference vector to act")
        ref = None if reference is None else np.asarray(reference, dtype=np.float64).reshape(1, -1)
        with T.no_grad():
            mu = self.actor(self.encoder(obs[None, :]), ref).data[0]
        if not explore:
            return mu
        if noise is None:
            noise = self.cfg.stddev * self.noise_rng.standard_normal(mu.shape)
        noise = np.clip(noise, -self.cfg.stddev_clip, self.cfg.stddev_clip)
        return np.clip(mu + noise, -1.0, 1.0)

    # ------------------------------------------------------------ learning
    def _refs(self, net: _SRNet, obs, retrieved, mask, noise, grad: bool):
        if not self.cfg.sr:
            return None
        if noise is not None:
            return Tensor(noise)
        if grad:
            return net.reference(obs, retrieved, mask)
        with T.no_grad():
            return Tensor(net.reference(obs, retrieved, mask).data)

    def critic_update(self, batch: Batch, noise=None, next_noise=None) -> float:
        with T.no_grad():
            u_next = self._refs(self.actor, batch.next_obs, batch.next_retrieved, batch.next_mask, next_noise, False)
            next_action = self.actor(batch.next_obs, u_next)
            ut_next = self._refs(self.critic_target, batch.next_obs, batch.next_retrieved, batch.next_mask, next_noise, False)
            target_q = self.critic_target(batch.next_obs, next_action, ut_next).data
        y = batch.reward + batch.discount * target_q
        u = self._refs(self.critic, batch.obs, batch.retrieved, batch.mask, noise, not self.critic_aggregator_frozen)
        q = self.critic(batch.obs, batch.action, u)
        diff = q - y
        loss = T.mean(diff * diff)
        self._check(loss, "critic")
        self.critic.zero_grad()
        T.backward(loss)
        self.critic_opt.step()
        return float(loss.data)

    def actor_update(self, batch: Batch, noise=None) -> float:
        u = self._refs(self.actor, batch.obs, batch.retrieved, batch.mask, noise, True)
        action = self.actor(batch.obs, u)
        uc = self._refs(self.critic, batch.obs, batch.retrieved, batch.mask, noise, False)
        loss = -T.mean(self.critic(batch.obs, action, uc))
        self._check(loss, "actor")
        self.actor.zero_grad()
        T.backward(loss)
        self.critic.zero_grad()
        self.actor_opt.step()
        return float(loss.data)

    def update_target(self) -> None:
        soft_update(self.critic_target, self.critic, self.cfg.tau)

    def update(self, batch: Batch, noise=None, next_noise=None) -> dict[str, float]:
        critic_loss = self.critic_update(batch, noise, next_noise)
        actor_loss = self.actor_update(batch, noise)
        self.update_target()
        return {"critic_loss": critic_loss, "actor_loss": actor_loss}

    @staticmethod
    def _check(loss: Tensor, which: str) -> None:
        if not np.all(np.isfinite(loss.data)):
            raise TrainingError(f"{which} loss is not finite ({loss.data})")


# ------------------------------------------------------------------ distillation


def gaussian_nll(mu: Tensor, target: np.ndarray, sigma: float) -> Tensor:
    """Mean over rows of -log N(target | mu, sigma^2 I)."""
    diff = T.as_tensor(target) - mu
    dim = target.shape[-1]
    const = dim * (math.log(sigma) + 0.5 * math.log(2.0 * math.pi))
    return T.mean(T.tsum(diff * diff, axis=-1)) * (0.5 / sigma**2) + const


def make_student(cfg: AgentConfig, seed: int) -> Actor:
    base = AgentConfig(**{**cfg.__dict__, "sr": False})
    return Actor(base, seed, name="student")


def distill(states: np.ndarray, teacher_actions: np.ndarray, student: Actor, epochs: int = 200,
            lr: float = 1e-3, batch_size: int = 256, sigma: float = 0.1, seed: int = 0) -> tuple[Actor, list[float]]:
    """Fit ``student`` to teacher-relabelled actions by Gaussian maximum likelihood.

    Uses a per-epoch cosine learning-rate schedule from ``lr`` to 0 and
    returns the student with its per-epoch mean loss.
    """
    states = np.asarray(states, dtype=np.float64)
    teacher_actions = np.asarray(teacher_actions, dtype=np.float64)
    opt = Adam(dict(student.named_parameters()), lr=lr)
    rng = make_rng(seed, "distill.shuffle")
    trace = []
    n = len(states)
    for epoch in range(epochs):
        opt.set_lr(cosine_lr(lr, epoch, epochs))
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = perm[lo : lo + batch_size]
            loss = gaussian_nll(student(states[idx]), teacher_actions[idx], sigma)
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / n)
    return student, trace


def policy_kl(mu_ft: np.ndarray, mu_pt: np.ndarray, sigma: float = 0.2) -> float:
    """Mean KL(N(mu_ft, s^2 I) || N(mu_pt, s^2 I)) over rows."""
    d = np.asarray(mu_ft, dtype=np.float64) - np.asarray(mu_pt, dtype=np.float64)
    d = d.reshape(len(d), -1)
    return float(np.mean(np.sum(d * d, axis=1)) / (2.0 * sigma**2))
