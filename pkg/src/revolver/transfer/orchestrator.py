"""The evolution loop: train on robots sampled from a window that slides to the target.

Each phase starts at ``alpha``. Every epoch samples ``beta`` uniformly from
``[alpha, min(alpha + delta, 1)]`` per episode, runs the current policy on the
cached robot nearest ``beta``, scales rewards by ``1 + h * beta`` and trains.
After a phase (and any adaptive extensions) ``alpha`` advances by ``step``
and the replay buffer drops tuples from robots outside the new window.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..rl import (
    MlpNet,
    PgAgent,
    ReplayBuffer,
    Td3Agent,
    Td3Config,
    discounted_returns,
    load_checkpoint,
    pg_update_arrays,
    policy_act,
    save_checkpoint,
    td3_update,
)
from ..rl.mlp import DivergenceError
from ..robot import KinematicTree, MorphologyCorrespondence, RobotModel, interpolate, load_robot, match_morphology
from ..robot.interp import flatten_params, linear, materialize, _blend_axes
from ..seeding import child_seeds, stream
from ..sim.env import EnvFamily, NumericalDivergence, rollout_batch
from .config import RunConfig, TransferConfig

log = logging.getLogger(__name__)

__all__ = [
    "shape_reward",
    "sample_beta",
    "RobotCache",
    "fetch_robot",
    "Learner",
    "PhaseRecord",
    "FinalEval",
    "TransferReport",
    "TrainingError",
    "run_phase",
    "adaptive_extend",
    "run_revolver",
    "run_baseline",
    "pretrain",
    "evaluate",
    "make_family",
    "build_pair",
]


class TrainingError(RuntimeError):
    """A divergence during training, with the phase and epoch it happened in."""

    def __init__(self, phase: int, epoch: int, cause: Exception):
        self.phase, self.epoch = phase, epoch
        super().__init__(f"phase {phase}, epoch {epoch}: {cause}")


def shape_reward(r, beta, h: float):
    """Reward scaled by ``1 + h * beta``."""
    return r * (1.0 + h * beta)


def sample_beta(alpha: float, delta: float, rng: np.random.Generator, size=None):
    """Uniform on ``[alpha, min(alpha + delta, 1)]``."""
    hi = min(alpha + delta, 1.0)
    if hi <= alpha:
        return np.full(size, alpha) if size is not None else float(alpha)
    return rng.uniform(alpha, hi, size)


class RobotCache:
    """Interpolated robots on the uniform grid ``k / (size - 1)``, materialised up front."""

    def __init__(self, corr: MorphologyCorrespondence, size: int = 1000, family_id: str = "", schedule=linear):
        if size < 2:
            raise ValueError("cache size must be >= 2 so that both ends are on the grid")
        self.corr = corr
        self.size = size
        self.grid = np.linspace(0.0, 1.0, size)
        theta_s, theta_t = flatten_params(corr)
        self.theta_s, self.theta_t = theta_s.values, theta_t.values
        self.models: list[RobotModel] = []
        for k, beta in enumerate(self.grid):
            if k == 0 or k == size - 1:
                self.models.append(interpolate(corr, float(beta), schedule, family_id))
                continue
            w = float(schedule(beta))
            values = (1.0 - w) * self.theta_s + w * self.theta_t
            tree = materialize(corr.augmented_source, values, _blend_axes(corr, w))
            self.models.append(RobotModel(tree, float(beta), family_id))

    def __len__(self):
        return len(self.models)

    def index(self, beta: float) -> int:
        return int(np.clip(np.rint(beta * (self.size - 1)), 0, self.size - 1))


def fetch_robot(cache: RobotCache, beta: float) -> RobotModel:
    """Cached robot at the grid point nearest ``beta``."""
    if cache is None or len(cache) == 0:
        raise ValueError("empty cache")
    return cache.models[cache.index(beta)]


def make_family(cfg: RunConfig, reward_mode: str | None = None) -> EnvFamily:
    kw = {"reward_mode": reward_mode or cfg.family.reward_mode}
    if cfg.family.horizon is not None:
        kw["horizon"] = cfg.family.horizon
    if cfg.family.id == "chain-locomotion":
        kw["fall_penalty"] = cfg.family.fall_penalty
        kw["success_distance"] = cfg.family.success_distance
    return EnvFamily.named(cfg.family.id, **kw)


def build_pair(cfg: RunConfig) -> tuple[KinematicTree, KinematicTree, MorphologyCorrespondence]:
    s = load_robot(cfg.resolve_robot(cfg.robots.source))
    t = load_robot(cfg.resolve_robot(cfg.robots.target))
    return s, t, match_morphology(s, t)


# -- learner -------------------------------------------------------------------


class Learner:
    """An RL backend plus its replay buffer, seen through one interface."""

    def __init__(self, backend: str, agent, obs_dim: int, act_dim: int, rl, rng: np.random.Generator):
        self.backend = backend
        self.agent = agent
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.rl = rl
        self.rng = rng
        self.buffer = ReplayBuffer(rl.buffer_capacity, obs_dim, act_dim)

    @classmethod
    def create(cls, rl, obs_dim: int, act_dim: int, seed: int) -> "Learner":
        init = stream(seed, "init")
        if rl.backend == "pg":
            agent = PgAgent.create(
                obs_dim, act_dim, rl.hidden, init, sigma=rl.sigma, actor_lr=rl.actor_lr,
                baseline_lr=rl.baseline_lr, baseline_epochs=rl.baseline_epochs,
            )
        else:
            cfg = Td3Config(rl.gamma, rl.tau, rl.policy_delay, rl.target_noise, rl.noise_clip, rl.actor_lr, rl.critic_lr)
            agent = Td3Agent.create(obs_dim, act_dim, rl.hidden, init, cfg)
        return cls(rl.backend, agent, obs_dim, act_dim, rl, stream(seed, "train"))

    @property
    def actor(self) -> MlpNet:
        return self.agent.actor

    def nets(self) -> dict[str, MlpNet]:
        a = self.agent
        if self.backend == "pg":
            return {"actor": a.actor, "baseline": a.baseline}
        return {
            "actor": a.actor, "critic1": a.critic1, "critic2": a.critic2,
            "actor_target": a.actor_target, "critic1_target": a.critic1_target, "critic2_target": a.critic2_target,
        }

    def act(self, obs: np.ndarray, explore: bool) -> np.ndarray:
        if not explore:
            return self.actor(obs)
        if self.backend == "pg":
            return self.agent.sample(obs, self.rng)
        return policy_act(self.actor, obs, self.rl.exploration_noise, self.rng, self.rl.noise_clip)

    def observe_step(self, obs, a, r_shaped, nxt, done, live, betas) -> None:
        """Store the live transitions of one lockstep; off-policy trains once per transition."""
        if not live.any():
            return
        self.buffer.push_many(obs[live], np.clip(a[live], -1, 1), r_shaped[live], nxt[live], done[live], betas[live])
        if self.backend == "td3" and len(self.buffer) >= self.rl.batch_size:
            for _ in range(int(live.sum())):
                td3_update(self.agent, self.buffer.sample(self.rl.batch_size, self.rng), self.rng)

    def end_epoch(self, ro, shaped: np.ndarray) -> None:
        if self.backend != "pg" or ro.n_steps == 0:
            return
        G = discounted_returns(shaped, self.rl.gamma, ro.dones)
        m = ro.mask
        pg_update_arrays(self.agent, ro.obs[m], ro.actions[m], G[m])

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta.update(backend=self.backend, obs_dim=self.obs_dim, act_dim=self.act_dim)
        if self.backend == "pg":
            meta["sigma"] = self.agent.sigma
        save_checkpoint(path, self.nets(), meta)

    @classmethod
    def load(cls, path, rl, seed: int) -> "Learner":
        nets, meta = load_checkpoint(path)
        if meta.get("backend") != rl.backend:
            raise ValueError(f"checkpoint was trained with backend {meta.get('backend')!r}, config uses {rl.backend!r}")
        obs_dim, act_dim = meta["obs_dim"], meta["act_dim"]
        learner = cls.create(rl, obs_dim, act_dim, seed)
        a = learner.agent
        for name, net in nets.items():
            setattr(a, name, net)
        if rl.backend == "td3" and "actor_target" not in nets:
            a.actor_target = a.actor.copy()
        return learner

    def clone_policy(self, rl, seed: int) -> "Learner":
        """Fresh optimiser state and buffer around copies of the current networks."""
        other = Learner.create(rl, self.obs_dim, self.act_dim, seed)
        for name, net in self.nets().items():
            setattr(other.agent, name, net.copy())
        return other


# -- phases ------------------------------------------------------------------------


@dataclass
class PhaseRecord:
    phase: int
    alpha: float
    epochs_used: int = 0
    extensions: int = 0
    env_steps: int = 0
    mean_shaped_reward: float = math.nan
    mean_raw_reward: float = math.nan
    success_rate: float = math.nan
    buffer_removed: int = 0
    episodes: int = 0

    def merged(self, other: "PhaseRecord") -> "PhaseRecord":
        n = self.episodes + other.episodes

        def avg(a, b):
            if other.episodes == 0:
                return a
            if self.episodes == 0:
                return b
            return (a * self.episodes + b * other.episodes) / n

        return replace(
            self,
            epochs_used=self.epochs_used + other.epochs_used,
            env_steps=self.env_steps + other.env_steps,
            mean_shaped_reward=avg(self.mean_shaped_reward, other.mean_shaped_reward),
            mean_raw_reward=avg(self.mean_raw_reward, other.mean_raw_reward),
            success_rate=avg(self.success_rate, other.success_rate),
            episodes=n,
        )


@dataclass(frozen=True)
class FinalEval:
    beta: float
    episodes: int
    mean_reward: float
    success_rate: float


@dataclass
class TransferReport:
    method: str
    phases: list[PhaseRecord] = field(default_factory=list)
    final: FinalEval | None = None
    env_steps: int = 0
    wall_time: float = 0.0
    seed: int = 0
    learner: Learner | None = field(default=None, repr=False, compare=False)

    @property
    def alphas(self) -> list[float]:
        return [p.alpha for p in self.phases]


@dataclass
class Budget:
    remaining: float = math.inf

    def spend(self, n: int) -> None:
        self.remaining -= n

    @property
    def exhausted(self) -> bool:
        return self.remaining <= 0


def run_phase(
    learner: Learner,
    alpha: float,
    config: TransferConfig,
    cache: RobotCache,
    family: EnvFamily,
    rng: np.random.Generator,
    epochs: int | None = None,
    budget: Budget | None = None,
    phase: int = 0,
    explore: bool = True,
    train: bool = True,
) -> PhaseRecord:
    """Run ``epochs`` (default N_e) epochs of window sampling, shaping and training."""
    epochs = config.epochs_per_phase if epochs is None else epochs
    budget = budget or Budget()
    rec = PhaseRecord(phase, float(alpha))
    shaped_sum = raw_sum = succ_sum = 0.0
    n_eps = learner.rl.episodes_per_epoch
    for epoch in range(epochs):
        if budget.exhausted:
            break
        betas = sample_beta(alpha, config.delta, rng, n_eps)
        models = [fetch_robot(cache, float(b)) for b in betas]
        betas = np.array([m.beta for m in models])
        seeds = child_seeds(rng, n_eps)

        def on_step(obs, a, r, nxt, done, live):
            if train:
                learner.observe_step(obs, a, shape_reward(r, betas, config.shaping_h), nxt, done, live, betas)

        try:
            ro = rollout_batch(models, family, lambda o: learner.act(o, explore), seeds, on_step=on_step)
            shaped = shape_reward(ro.rewards * ro.mask, betas[:, None], config.shaping_h)
            if train:
                learner.end_epoch(ro, shaped)
        except (DivergenceError, NumericalDivergence, FloatingPointError) as e:
            raise TrainingError(phase, epoch, e) from e
        budget.spend(ro.n_steps)
        rec.epochs_used += 1
        rec.env_steps += ro.n_steps
        rec.episodes += n_eps
        shaped_sum += float(shaped.sum())
        raw_sum += float(ro.returns.sum())
        succ_sum += float(ro.success.sum())
    if rec.episodes:
        rec.mean_shaped_reward = shaped_sum / rec.episodes
        rec.mean_raw_reward = raw_sum / rec.episodes
        rec.success_rate = succ_sum / rec.episodes
    return rec


def adaptive_extend(record: PhaseRecord, previous: PhaseRecord | None, config: TransferConfig, extensions_used: int = 0, sparse: bool = False) -> bool:
    """Whether to run the current phase for another N_e epochs.

    Extends when the raw reward fell by more than ``drop_threshold`` of the
    previous phase's magnitude, or (sparse rewards) when success is below
    ``success_floor``. Never beyond ``max_extensions``.
    """
    drop = False
    if previous is not None and record.episodes and previous.episodes:
        prev = previous.mean_raw_reward
        drop = record.mean_raw_reward < prev - config.drop_threshold * abs(prev)
    if sparse and record.episodes and record.success_rate < config.success_floor:
        drop = True
    if drop and extensions_used >= config.max_extensions:
        log.warning("phase %d at alpha=%.4f: extension cap (%d) reached", record.phase, record.alpha, config.max_extensions)
        return False
    return drop


def evaluate(learner: Learner, model: RobotModel, family: EnvFamily, episodes: int, seed: int, batch: int = 50) -> FinalEval:
    """Deterministic-policy returns (unshaped) and success rate over ``episodes`` resets."""
    rng = stream(seed, "eval")
    rets, succ = [], []
    for start in range(0, episodes, batch):
        n = min(batch, episodes - start)
        ro = rollout_batch([model] * n, family, lambda o: learner.act(o, False), child_seeds(rng, n))
        rets.append(ro.returns)
        succ.append(ro.success)
    rets, succ = np.concatenate(rets), np.concatenate(succ)
    return FinalEval(float(model.beta), episodes, float(rets.mean()), float(succ.mean()))


def _dims(corr: MorphologyCorrespondence, family: EnvFamily) -> tuple[int, int]:
    return 2 * corr.n_joints + family.aux_dim, corr.n_joints


def run_revolver(cfg: RunConfig, expert: Learner, cache: RobotCache | None = None, progress=None) -> TransferReport:
    """Evolve the expert from the source robot to the target robot."""
    t0 = time.perf_counter()
    rc = cfg.revolver
    family = make_family(cfg)
    if cache is None:
        _, _, corr = build_pair(cfg)
        cache = RobotCache(corr, rc.cache_size, cfg.family.id)
    if expert is None:
        raise ValueError("missing expert policy for the source robot")
    learner = expert.clone_policy(cfg.rl_resolved, rc.seed)
    rng = stream(rc.seed, "revolver")
    budget = Budget(rc.total_steps)
    sparse = family.reward_mode == "sparse"
    report = TransferReport("revolver", seed=rc.seed)
    alpha, k, prev = 0.0, 0, None
    while alpha < 1.0 - 1e-12 and not budget.exhausted:
        rec = run_phase(learner, alpha, rc, cache, family, rng, budget=budget, phase=k)
        while not budget.exhausted and adaptive_extend(rec, prev, rc, rec.extensions, sparse):
            more = run_phase(learner, alpha, rc, cache, family, rng, budget=budget, phase=k)
            rec = rec.merged(more)
            rec.extensions += 1
        alpha = min(1.0, alpha + rc.step_at(k))
        rec.buffer_removed = learner.buffer.clean(alpha, min(alpha + rc.delta, 1.0))
        report.phases.append(rec)
        if progress:
            progress(rec)
        prev = rec
        k += 1
    if alpha >= 1.0 - 1e-12 and not budget.exhausted and rc.total_steps != math.inf:
        rec = run_phase(learner, 1.0, rc, cache, family, rng, epochs=_epochs_left(budget), budget=budget, phase=k)
        rec.buffer_removed = learner.buffer.clean(1.0, 1.0)
        report.phases.append(rec)
        if progress:
            progress(rec)
    report.env_steps = sum(p.env_steps for p in report.phases)
    report.final = evaluate(learner, fetch_robot(cache, 1.0), make_family(cfg), rc.eval_episodes, rc.seed)
    report.wall_time = time.perf_counter() - t0
    report.learner = learner
    return report


def _epochs_left(budget: Budget) -> int:
    return 10**9 if budget.remaining > 0 else 0


def run_baseline(cfg: RunConfig, method: str, expert: Learner | None = None, cache: RobotCache | None = None, progress=None) -> TransferReport:
    """Train directly on the target robot: ``direct`` starts from the expert, ``scratch`` from random weights."""
    t0 = time.perf_counter()
    rc = cfg.revolver
    family = make_family(cfg)
    if cache is None:
        _, _, corr = build_pair(cfg)
        cache = RobotCache(corr, rc.cache_size, cfg.family.id)
    obs_dim, act_dim = _dims(cache.corr, family)
    if method == "direct":
        if expert is None:
            raise ValueError("direct fine-tuning needs an expert policy")
        learner = expert.clone_policy(cfg.rl_resolved, rc.seed)
    elif method == "scratch":
        learner = Learner.create(cfg.rl_resolved, obs_dim, act_dim, rc.seed)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    plain = replace(rc, shaping_h=0.0)
    budget = Budget(rc.total_steps)
    rec = run_phase(learner, 1.0, plain, cache, family, stream(rc.seed, method), epochs=_epochs_left(budget), budget=budget)
    report = TransferReport(method, [rec], seed=rc.seed)
    if progress:
        progress(rec)
    report.env_steps = rec.env_steps
    report.final = evaluate(learner, fetch_robot(cache, 1.0), family, rc.eval_episodes, rc.seed)
    report.wall_time = time.perf_counter() - t0
    report.learner = learner
    return report


def pretrain(cfg: RunConfig, steps: int | None = None, cache: RobotCache | None = None, progress=None) -> tuple[Learner, FinalEval]:
    """Train an expert on the (padded) source robot from scratch."""
    rc, rl = cfg.revolver, cfg.rl_resolved
    if rl.pretrain_actor_lr is not None:
        rl = replace(rl, actor_lr=rl.pretrain_actor_lr)
    family = make_family(cfg, rl.pretrain_reward_mode)
    if cache is None:
        _, _, corr = build_pair(cfg)
        cache = RobotCache(corr, 2, cfg.family.id)
    obs_dim, act_dim = _dims(cache.corr, family)
    learner = Learner.create(rl, obs_dim, act_dim, stream(rc.seed, "pretrain").integers(2**63 - 1))
    plain = replace(rc, shaping_h=0.0, delta=1e-12)
    budget = Budget(rl.pretrain_steps if steps is None else steps)
    rng = stream(rc.seed, "pretrain-rollouts")
    while not budget.exhausted:
        rec = run_phase(learner, 0.0, plain, cache, family, rng, epochs=10, budget=budget)
        if progress:
            progress(rec)
    ev = evaluate(learner, fetch_robot(cache, 0.0), make_family(cfg), rc.eval_episodes, rc.seed)
    return learner, ev
