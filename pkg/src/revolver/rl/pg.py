"""Likelihood-ratio policy gradient with a learned value baseline.

The policy is Gaussian with a fixed standard deviation around the tanh
output of an MLP. Sampled actions are stored unclipped so the score
function matches the distribution they were drawn from; environments clamp
them to [-1, 1] on their own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import Adam, DivergenceError, MlpNet

__all__ = [
    "PgAgent",
    "discounted_returns",
    "pg_objective",
    "pg_gradient",
    "pg_update",
    "pg_update_arrays",
]


@dataclass
class PgAgent:
    actor: MlpNet
    baseline: MlpNet
    sigma: float = 0.3
    actor_lr: float = 3e-4
    baseline_lr: float = 1e-3
    baseline_epochs: int = 5
    normalize: bool = True
    optimizer: str = "adam"
    actor_opt: Adam = None
    baseline_opt: Adam = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.actor_opt = self.actor_opt or Adam(self.actor_lr)
        self.baseline_opt = self.baseline_opt or Adam(self.baseline_lr)

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator, actor: MlpNet | None = None, **kw) -> "PgAgent":
        hidden = tuple(hidden)
        actor = actor or MlpNet.init((obs_dim, *hidden, act_dim), rng, "tanh", out_scale=0.1)
        baseline = MlpNet.init((obs_dim, *hidden, 1), rng)
        return cls(actor, baseline, **kw)

    def sample(self, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.actor(s)
        return mu + self.sigma * rng.standard_normal(mu.shape)


def discounted_returns(rewards: np.ndarray, gamma: float, dones: np.ndarray | None = None) -> np.ndarray:
    """Reward-to-go along the last axis; ``dones`` resets the sum after terminal steps."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[:-1])
    for t in range(rewards.shape[-1] - 1, -1, -1):
        if dones is not None:
            acc = np.where(dones[..., t], 0.0, acc)
        acc = rewards[..., t] + gamma * acc
        out[..., t] = acc
    return out


def pg_objective(actor: MlpNet, s, a, adv, sigma: float) -> float:
    """Surrogate ``mean(log pi(a|s) * adv)`` without the constant normaliser."""
    mu = actor(s)
    logp = -0.5 * np.sum((a - mu) ** 2, axis=-1) / sigma**2
    return float(np.mean(logp * adv))


def pg_gradient(actor: MlpNet, s, a, adv, sigma: float):
    """Analytic gradient of ``pg_objective`` w.r.t. the actor parameters."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    mu, acts = actor.forward(s)
    g_mu = (a - mu) / sigma**2 * np.asarray(adv, dtype=float)[:, None] / len(s)
    gw, gb, _ = actor.backward(acts, g_mu)
    return gw, gb


def _sgd(net: MlpNet, gw, gb, lr: float) -> None:
    for p, g in zip(net.weights + net.biases, list(gw) + list(gb)):
        if not np.all(np.isfinite(g)):
            raise DivergenceError("divergence: non-finite gradient")
        p += lr * g


def pg_update_arrays(agent: PgAgent, s: np.ndarray, a: np.ndarray, returns: np.ndarray, lr: float | None = None) -> dict:
    """One actor step on flattened samples, then refit the baseline to ``returns``."""
    if len(s) == 0:
        raise ValueError("no samples")
    v = agent.baseline(s)[:, 0]
    adv = returns - v
    if agent.normalize:
        if np.ptp(returns) <= 1e-12:
            # constant returns carry no signal; normalising would blow baseline error up to unit scale
            adv = np.zeros_like(adv)
        else:
            std = adv.std()
            adv = (adv - adv.mean()) / (std if std > 1e-8 else 1.0)
    gw, gb = pg_gradient(agent.actor, s, a, adv, agent.sigma)
    if agent.optimizer == "adam":
        if lr is not None:
            agent.actor_opt.lr = lr
        agent.actor_opt.step(agent.actor, gw, gb, ascend=True)
    else:
        _sgd(agent.actor, gw, gb, agent.actor_lr if lr is None else lr)
    loss = 0.0
    for _ in range(agent.baseline_epochs):
        out, acts = agent.baseline.forward(s)
        err = out[:, 0] - returns
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise DivergenceError("divergence: non-finite baseline loss")
        bw, bb, _ = agent.baseline.backward(acts, (2.0 * err / len(s))[:, None])
        agent.baseline_opt.step(agent.baseline, bw, bb)
    return {"baseline_loss": loss, "mean_return": float(np.mean(returns))}


def pg_update(agent: PgAgent, trajectories, gamma: float, lr: float | None = None) -> dict:
    """Update from a list of trajectories, each a sequence of objects with ``s``, ``a``, ``r``."""
    if not trajectories or all(len(tr) == 0 for tr in trajectories):
        raise ValueError("trajectories must be non-empty")
    s, a, g = [], [], []
    for tr in trajectories:
        if not tr:
            continue
        s.append(np.array([x.s for x in tr]))
        a.append(np.array([x.a for x in tr]))
        g.append(discounted_returns(np.array([x.r for x in tr]), gamma))
    return pg_update_arrays(agent, np.concatenate(s), np.concatenate(a), np.concatenate(g), lr)
