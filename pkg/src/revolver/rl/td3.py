"""Twin-critic deterministic policy gradient with delayed actor updates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import Adam, DivergenceError, MlpNet
from .replay import Batch

__all__ = ["Td3Agent", "Td3Config", "td3_update"]


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4


@dataclass
class Td3Agent:
    actor: MlpNet
    critic1: MlpNet
    critic2: MlpNet
    actor_target: MlpNet
    critic1_target: MlpNet
    critic2_target: MlpNet
    config: Td3Config = field(default_factory=Td3Config)
    updates: int = 0
    actor_opt: Adam = None
    critic1_opt: Adam = None
    critic2_opt: Adam = None

    def __post_init__(self):
        self.actor_opt = self.actor_opt or Adam(self.config.actor_lr)
        self.critic1_opt = self.critic1_opt or Adam(self.config.critic_lr)
        self.critic2_opt = self.critic2_opt or Adam(self.config.critic_lr)

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator, config: Td3Config | None = None, actor: MlpNet | None = None):
        config = config or Td3Config()
        hidden = tuple(hidden)
        actor = actor or MlpNet.init((obs_dim, *hidden, act_dim), rng, "tanh", out_scale=0.1)
        c1 = MlpNet.init((obs_dim + act_dim, *hidden, 1), rng)
        c2 = MlpNet.init((obs_dim + act_dim, *hidden, 1), rng)
        return cls(actor, c1, c2, actor.copy(), c1.copy(), c2.copy(), config)

    def q1(self, s, a) -> np.ndarray:
        return self.critic1(np.concatenate([s, a], axis=-1))[..., 0]


def _critic_step(net: MlpNet, opt: Adam, x, y) -> float:
    q, acts = net.forward(x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise DivergenceError("divergence: non-finite critic loss")
    gw, gb, _ = net.backward(acts, (2.0 * err / len(y))[:, None])
    opt.step(net, gw, gb)
    return loss


def td3_update(agent: Td3Agent, batch: Batch, rng: np.random.Generator, gamma: float | None = None, tau: float | None = None, policy_delay: int | None = None) -> dict:
    """One critic step, and an actor step plus Polyak averaging every ``policy_delay`` calls."""
    cfg = agent.config
    gamma = cfg.gamma if gamma is None else gamma
    tau = cfg.tau if tau is None else tau
    policy_delay = cfg.policy_delay if policy_delay is None else policy_delay
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")

    noise = np.clip(rng.normal(0.0, cfg.target_noise, batch.a.shape), -cfg.noise_clip, cfg.noise_clip)
    a2 = np.clip(agent.actor_target(batch.s2) + noise, -1.0, 1.0)
    x2 = np.concatenate([batch.s2, a2], axis=-1)
    q_next = np.minimum(agent.critic1_target(x2)[:, 0], agent.critic2_target(x2)[:, 0])
    y = batch.r + gamma * (1.0 - batch.done) * q_next

    x = np.concatenate([batch.s, batch.a], axis=-1)
    loss1 = _critic_step(agent.critic1, agent.critic1_opt, x, y)
    loss2 = _critic_step(agent.critic2, agent.critic2_opt, x, y)
    agent.updates += 1
    report = {"critic_loss": 0.5 * (loss1 + loss2), "actor_loss": None}

    if agent.updates % policy_delay == 0:
        a, actor_acts = agent.actor.forward(batch.s)
        xq = np.concatenate([batch.s, a], axis=-1)
        q, critic_acts = agent.critic1.forward(xq)
        _, _, gx = agent.critic1.backward(critic_acts, np.full((len(batch), 1), 1.0 / len(batch)))
        gw, gb, _ = agent.actor.backward(actor_acts, gx[:, batch.s.shape[1] :])
        agent.actor_opt.step(agent.actor, gw, gb, ascend=True)
        report["actor_loss"] = -float(np.mean(q))
        agent.actor_target.polyak(agent.actor, tau)
        agent.critic1_target.polyak(agent.critic1, tau)
        agent.critic2_target.polyak(agent.critic2, tau)
    return report
