"""Self-Reference: query production, reference-vector aggregation and the
on-policy training of the query module."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import MLP, Embedding, Module, MultiHeadAttention, make_rng
from .optim import Adam, clip_grad_norm
from .retrieval import RetrievalSet
from .tensor import Tensor

STRATEGIES = ("learned", "current_state", "random_sample", "noise_reference")
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class QueryDecision:
    """What the retriever should do this step.

    ``mode`` is ``"knn"`` (search around ``query``), ``"random"`` (uniform
    storage indices) or ``"noise"`` (skip retrieval, draw a N(0, 1) vector).
    """

    mode: str
    query: np.ndarray | None = None
    trainable: bool = False
    logprob: float = 0.0


@dataclass
class QueryRollout:
    states: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    logprobs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    final_state: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.states)

    def add(self, state, query, logprob, reward) -> None:
        self.states.append(np.asarray(state, dtype=np.float64))
        self.queries.append(np.asarray(query, dtype=np.float64))
        self.logprobs.append(float(logprob))
        self.rewards.append(float(reward))

    def clear(self) -> None:
        self.__init__()


@dataclass
class PPOConfig:
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    epochs: int = 4
    minibatches: int = 4
    lr: float = 3e-4
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    identity_coef: float = 1.0


class QueryModule(Module):
    """Gaussian query policy over the state space plus its value function.

    The policy mean is ``s + f(s)``: the identity is the zero-offset point,
    which is where the identity loss pulls it.
    """

    def __init__(self, state_dim: int, hidden: int = 64, seed: int = 0, log_std_init: float = 0.0,
                 ppo: PPOConfig | None = None):
        self.state_dim = state_dim
        self.actor = MLP([state_dim, hidden, hidden, state_dim], make_rng(seed, "query.actor"), final_gain=0.01)
        self.log_std = Tensor(np.full(state_dim, log_std_init), requires_grad=True)
        self.critic = MLP([state_dim, hidden, hidden, 1], make_rng(seed, "query.critic"))
        self.ppo = ppo or PPOConfig()
        self.opt = Adam(dict(self.named_parameters()), lr=self.ppo.lr, eps=1e-5)
        self.rng = make_rng(seed, "query.sample")

    def mean(self, states) -> Tensor:
        s = T.as_tensor(states)
        return s + self.actor(s)

    def clamped_log_std(self) -> Tensor:
        return T.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def log_prob(self, states, queries) -> Tensor:
        mu = self.mean(states)
        log_std = self.clamped_log_std()
        z = (T.as_tensor(queries) - mu) * T.exp(-log_std)
        return T.tsum(z * z * -0.5 - log_std, axis=-1) - 0.5 * self.state_dim * _LOG_2PI

    def sample(self, state) -> tuple[np.ndarray, float]:
        with T.no_grad():
            mu = self.mean(np.asarray(state, dtype=np.float64)[None, :]).data[0]
            log_std = np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX)
        eps = self.rng.standard_normal(self.state_dim)
        q = mu + np.exp(log_std) * eps
        logp = float(np.sum(-0.5 * eps * eps - log_std) - 0.5 * self.state_dim * _LOG_2PI)
        return q, logp

    def value(self, states) -> Tensor:
        return T.reshape(self.critic(states), (-1,))


def make_query(module: QueryModule | None, strategy: str, state, episode_index: int, phase: str) -> QueryDecision:
    """Decide this step's query.

    With the learned strategy during pretraining, odd episodes bypass the
    module and query with the current state; those steps are not trainable.
    """
    state = np.asarray(state, dtype=np.float64)
    if strategy == "learned":
        if phase == "pt" and episode_index % 2 == 1:
            return QueryDecision("knn", state.copy(), trainable=False)
        q, logp = module.sample(state)
        return QueryDecision("knn", q, trainable=True, logprob=logp)
    if strategy == "current_state":
        return QueryDecision("knn", state.copy())
    if strategy == "random_sample":
        return QueryDecision("random")
    if strategy == "noise_reference":
        return QueryDecision("noise")
    raise ValueError(f"unknown query strategy {strategy!r}; expected one of {STRATEGIES}")


def deterministic_query(module: QueryModule | None, strategy: str, state) -> QueryDecision:
    """Noise-free query used for evaluation: the policy mean for the learned strategy."""
    state = np.asarray(state, dtype=np.float64)
    if strategy == "learned":
        with T.no_grad():
            return QueryDecision("knn", module.mean(state[None, :]).data[0])
    if strategy == "current_state":
        return QueryDecision("knn", state.copy())
    return make_query(module, strategy, state, 0, "ft")


def query_reward_assignment(rewards, trainable: bool = True) -> list[float]:
    """The query agent is paid exactly what the main agent is paid."""
    return [float(r) for r in rewards] if trainable else []


class Aggregator(Module):
    """Cross-attention from the encoded current state onto encoded retrieved
    states, with a learnable embedding of each state's offset in its list."""

    def __init__(self, state_dim: int, model_dim: int = 256, hidden: int = 256, num_heads: int = 4,
                 horizon: int = 5, seed: int = 0, name: str = "aggregator"):
        self.q_encoder = MLP([state_dim, hidden, model_dim], make_rng(seed, f"{name}.q_encoder"))
        self.k_encoder = MLP([state_dim, hidden, model_dim], make_rng(seed, f"{name}.k_encoder"))
        self.v_encoder = MLP([state_dim, hidden, model_dim], make_rng(seed, f"{name}.v_encoder"))
        self.time_embed = Embedding(horizon, model_dim, make_rng(seed, f"{name}.time_embed"))
        self.mha = MultiHeadAttention(model_dim, num_heads, make_rng(seed, f"{name}.mha"))
        self.model_dim = model_dim
        self.horizon = horizon

    def __call__(self, states, retrieved, offsets, mask=None) -> Tensor:
        """``states`` (B, S), ``retrieved`` (B, M, S), ``offsets`` (M,) -> (B, U).

        Rows whose ``mask`` entry is 0 (nothing retrieved yet) come out as
        exact zeros.
        """
        q = self.q_encoder(states)
        t = self.time_embed(offsets)
        k = self.k_encoder(retrieved) + t
        v = self.v_encoder(retrieved) + t
        u = self.mha(q, k, v)
        if mask is not None:
            u = u * np.asarray(mask, dtype=np.float64)[:, None]
        return u


def aggregate(retrieved: RetrievalSet | None, current_state, aggregator: Aggregator) -> Tensor:
    """Reference vector for one state; zeros when nothing was retrieved."""
    if retrieved is None or retrieved.k == 0:
        return Tensor(np.zeros((1, aggregator.model_dim)))
    s = np.asarray(current_state, dtype=np.float64)[None, :]
    flat = retrieved.flat_states()[None, :, :]
    return aggregator(s, flat, retrieved.flat_offsets())


def noise_reference(model_dim: int, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    shape = (model_dim,) if batch is None else (batch, model_dim)
    return rng.standard_normal(shape)


# ------------------------------------------------------------------ PPO


def gae(rewards: np.ndarray, values: np.ndarray, last_value: float, gamma: float, lam: float) -> np.ndarray:
    """Advantages for a single truncated episode that bootstraps from ``last_value``."""
    adv = np.zeros(len(rewards))
    running = 0.0
    for t in reversed(range(len(rewards))):
        nxt = values[t + 1] if t + 1 < len(rewards) else last_value
        delta = rewards[t] + gamma * nxt - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv


def identity_loss(module: QueryModule, states) -> Tensor:
    """Mean over states of the L2 distance between the policy mean and the state."""
    s = T.as_tensor(states)
    return T.mean(T.l2norm(module.mean(s) - s, axis=-1))


def query_actor_loss(module: QueryModule, states, queries, old_logprobs, advantages,
                     clip: float = 0.2, identity_coef: float = 1.0,
                     normalize: bool = True) -> tuple[Tensor, dict]:
    """Clipped PPO surrogate plus the identity regulariser."""
    adv = np.asarray(advantages, dtype=np.float64)
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    logp = module.log_prob(states, queries)
    ratio = T.exp(logp - np.asarray(old_logprobs, dtype=np.float64))
    surrogate = T.minimum(ratio * adv, T.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)
    ppo = -T.mean(surrogate)
    ident = identity_loss(module, states)
    total = ppo + identity_coef * ident
    return total, {"ppo": float(ppo.data), "identity": float(ident.data)}


def value_loss(module: QueryModule, states, returns) -> Tensor:
    diff = module.value(states) - np.asarray(returns, dtype=np.float64)
    return T.mean(diff * diff) * 0.5


def ppo_update(module: QueryModule, rollout: QueryRollout) -> dict | None:
    """Run the PPO epochs on one rollout; an empty rollout is a no-op."""
    if len(rollout) == 0:
        return None
    cfg = module.ppo
    states = np.stack(rollout.states)
    queries = np.stack(rollout.queries)
    old_logp = np.asarray(rollout.logprobs)
    rewards = np.asarray(rollout.rewards)
    with T.no_grad():
        values = module.value(states).data
        final = rollout.final_state if rollout.final_state is not None else states[-1]
        last_value = float(module.value(np.asarray(final)[None, :]).data[0])
    adv = gae(rewards, values, last_value, cfg.gamma, cfg.gae_lambda)
    returns = adv + values
    n = len(states)
    mb = max(1, n // cfg.minibatches)
    stats = {"query_loss": 0.0, "ppo": 0.0, "identity": 0.0, "value": 0.0}
    updates = 0
    for _ in range(cfg.epochs):
        perm = module.rng.permutation(n)
        for lo in range(0, n, mb):
            idx = perm[lo : lo + mb]
            loss, parts = query_actor_loss(
                module, states[idx], queries[idx], old_logp[idx], adv[idx], cfg.clip, cfg.identity_coef
            )
            vloss = value_loss(module, states[idx], returns[idx])
            total = loss + cfg.value_coef * vloss
            if not np.isfinite(total.data):
                raise FloatingPointError(f"query module loss is not finite: {parts}")
            module.opt.zero_grad()
            T.backward(total)
            clip_grad_norm(module.parameters(), cfg.max_grad_norm)
            module.opt.step()
            stats["query_loss"] += float(loss.data)
            stats["ppo"] += parts["ppo"]
            stats["identity"] += parts["identity"]
            stats["value"] += float(vloss.data)
            updates += 1
    return {k: v / updates for k, v in stats.items()}
