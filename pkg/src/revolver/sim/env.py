"""Two environment families that run any interpolated robot.

``chain-locomotion``: a free torso carried by legs. The torso stays level;
its height follows the lowest body tip and it moves forward by the no-slip
motion of the tips touching the ground. Falling (torso below a fraction of
its nominal height) ends the episode with a penalty.

``reach-grasp``: an arm fixed at the origin moves in the horizontal plane.
The object latches to the palm tip when the tip is close enough and the
fingers are closed, and is released when they open again.

Observations are laid out as ``[q, qdot, aux]`` so the zero-padding maps of
a morphology correspondence apply to them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..robot.interp import RobotModel
from . import physics
from .physics import Compiled

__all__ = [
    "EnvFamily",
    "EnvState",
    "IncompatibleModel",
    "NumericalDivergence",
    "TransitionTuple",
    "reset",
    "step",
    "rollout",
    "observe",
    "compiled",
    "VecEnv",
]

LOCOMOTION = "chain-locomotion"
VELOCITY_SCALE = 0.1  # joint velocities are scaled by this in observations
GRASP = "reach-grasp"


class IncompatibleModel(ValueError):
    pass


class NumericalDivergence(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"numerical divergence at step {step}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class EnvFamily:
    family_id: str
    reward_mode: str = "dense"
    horizon: int = 200
    dt: float = 0.01
    gravity: float = 9.81
    init_noise: float = 0.01
    ctrl_cost: float = 0.001
    # locomotion
    fall_penalty: float = -10.0
    fall_fraction: float = 0.3
    success_distance: float = 1.0
    contact_band: float = 0.02
    gait_hz: float = 3.0
    # grasp
    object_pos: tuple[float, float, float] = (0.6, 0.2, 0.0)
    goal_pos: tuple[float, float, float] = (0.4, 0.45, 0.0)
    object_noise: float = 0.01
    grasp_radius: float = 0.03
    goal_radius: float = 0.05
    close_threshold: float = 0.7
    open_threshold: float = 0.4
    grip_cost: float = 0.1  # dense mode only

    def __post_init__(self):
        if self.family_id not in (LOCOMOTION, GRASP):
            raise ValueError(f"unknown family {self.family_id!r}")
        if self.reward_mode not in ("dense", "sparse"):
            raise ValueError(f"reward_mode must be 'dense' or 'sparse', got {self.reward_mode!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0:
            raise ValueError("integrator step must be > 0")

    @classmethod
    def chain_locomotion(cls, **kw) -> "EnvFamily":
        return cls(LOCOMOTION, **{"horizon": 200, **kw})

    @classmethod
    def reach_grasp(cls, **kw) -> "EnvFamily":
        return cls(GRASP, **{"horizon": 150, **kw})

    @classmethod
    def named(cls, family_id: str, **kw) -> "EnvFamily":
        if family_id == LOCOMOTION:
            return cls.chain_locomotion(**kw)
        if family_id == GRASP:
            return cls.reach_grasp(**kw)
        raise ValueError(f"unknown family {family_id!r}")

    @property
    def aux_dim(self) -> int:
        return 4 if self.family_id == LOCOMOTION else 5


@dataclass(frozen=True)
class EnvState:
    """Single-environment state.

    ``task`` is ``[x, z, vx, x0, fallen]`` for locomotion (torso position,
    forward speed, start position) and ``[ox, oy, oz, attached, reached]``
    for grasping.
    """

    q: np.ndarray
    qd: np.ndarray
    frames: np.ndarray  # world position of each body tip (n, 3)
    step: int
    task: np.ndarray


@dataclass(frozen=True)
class TransitionTuple:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: float
    done: bool
    beta: float


def compiled(model: RobotModel) -> Compiled:
    """Compiled arrays for a model, memoised on the (immutable) model object."""
    c = model.__dict__.get("_compiled")
    if c is None:
        c = physics.compile_tree(model.tree)
        object.__setattr__(model, "_compiled", c)
    return c


@dataclass(frozen=True)
class _Layout:
    palm: int = -1
    fingers: tuple[int, ...] = ()


def _layout(model: RobotModel, family: EnvFamily) -> _Layout:
    tree = model.tree
    if family.family_id == LOCOMOTION:
        if tree.bodies[0].name != "torso":
            raise IncompatibleModel("chain-locomotion needs the root body to be named 'torso'")
        if tree.n_bodies < 2:
            raise IncompatibleModel("chain-locomotion needs at least one leg")
        return _Layout()
    try:
        palm = tree.index("palm")
    except KeyError:
        raise IncompatibleModel("reach-grasp needs a body named 'palm'") from None
    fingers = tuple(k for k in tree.subtree(palm) if k != palm)
    if not fingers:
        raise IncompatibleModel("reach-grasp needs finger bodies below the palm")
    return _Layout(palm, fingers)


class VecEnv:
    """A batch of robots with one topology stepping in lockstep.

    All arrays are (B, ...). Finished environments keep their state frozen
    and report zero reward.
    """

    def __init__(self, models: list[RobotModel], family: EnvFamily):
        layouts = {_layout(m, family) for m in models}
        if len(layouts) != 1:
            raise IncompatibleModel("batched robots must share one layout")
        self.layout = layouts.pop()
        self.models = list(models)
        self.family = family
        self.c = physics.stack([compiled(m) for m in models])
        self.B = len(models)
        self.nj = self.c.n_joints
        self.betas = np.array([m.beta for m in models])
        zero = physics.forward_kinematics(self.c, np.zeros((self.B, self.nj)))
        self.nominal_height = self._support(zero)
        if family.family_id == GRASP:
            fingers = list(self.layout.fingers)
            width = self.c.hi[:, np.array(fingers) - 1] - self.c.lo[:, np.array(fingers) - 1]
            self._finger_w = np.where(width > 0, self.c.mass[:, fingers], 0.0)
            self._finger_width = width
            wsum = self._finger_w.sum(-1)
            self._finger_wsum = np.where(wsum > 0, wsum, 1.0)

    # -- state -----------------------------------------------------------------
    def reset(self, rngs: list[np.random.Generator]):
        fam = self.family
        # Only joints that can move draw noise, so padding a robot leaves the
        # random stream (and hence the initial state) unchanged.
        movable = self.c.hi > self.c.lo
        noise = np.zeros((self.B, self.nj))
        for b, r in enumerate(rngs):
            noise[b, movable[b]] = r.uniform(-fam.init_noise, fam.init_noise, int(movable[b].sum()))
        q = np.clip(noise, self.c.lo, self.c.hi)
        qd = np.zeros_like(q)
        if fam.family_id == LOCOMOTION:
            f = physics.forward_kinematics(self.c, q)
            z = self._support(f)
            zero = np.zeros(self.B)
            task = np.stack([zero, z, zero, zero, zero], axis=-1)
        else:
            jitter = np.stack([r.uniform(-fam.object_noise, fam.object_noise, 2) for r in rngs])
            obj = np.array(fam.object_pos)[None].repeat(self.B, 0)
            obj[:, :2] += jitter
            task = np.concatenate([obj, np.zeros((self.B, 2))], axis=-1)
        return q, qd, task, np.zeros(self.B, dtype=int)

    def _support(self, f: physics.Frames) -> np.ndarray:
        low = -f.tip[:, 1:, 2].min(axis=1)
        return np.maximum(low, self.c.root_height)

    def _closure(self, q):
        idx = np.array(self.layout.fingers) - 1
        width = self._finger_width
        frac = np.divide(q[:, idx] - self.c.lo[:, idx], width, out=np.zeros_like(width), where=width > 0)
        return (self._finger_w * frac).sum(-1) / self._finger_wsum

    def observe(self, q, qd, task, t):
        fam = self.family
        if fam.family_id == LOCOMOTION:
            phase = 2.0 * math.pi * fam.gait_hz * fam.dt * t
            aux = np.stack([task[:, 1], task[:, 2], np.sin(phase), np.cos(phase)], axis=-1)
        else:
            aux = np.stack(
                [self._closure(q), task[:, 3], t / fam.horizon, task[:, 0], task[:, 1]], axis=-1
            )
        return np.concatenate([q, VELOCITY_SCALE * qd, aux], axis=-1)

    def tips_world(self, q, task) -> np.ndarray:
        f = physics.forward_kinematics(self.c, q)
        tips = f.tip.copy()
        if self.family.family_id == LOCOMOTION:
            tips[:, :, 0] += task[:, None, 0]
            tips[:, :, 2] += task[:, None, 1]
        return tips

    # -- dynamics --------------------------------------------------------------
    def step(self, q, qd, task, t, action, active=None):
        """Advance every environment one integrator step.

        Returns ``(q, qd, task, t, reward, done, success)``.
        """
        fam = self.family
        a = np.clip(action, -1.0, 1.0)
        f0 = physics.forward_kinematics(self.c, q)
        if fam.family_id == LOCOMOTION:
            out = self._step_locomotion(q, qd, task, a, f0)
        else:
            out = self._step_grasp(q, qd, task, a, f0, t)
        q1, qd1, task1, reward, done, success = out
        t1 = t + 1
        done = done | (t1 >= fam.horizon)
        if active is not None:
            keep = ~active
            q1 = np.where(keep[:, None], q, q1)
            qd1 = np.where(keep[:, None], qd, qd1)
            task1 = np.where(keep[:, None], task, task1)
            t1 = np.where(keep, t, t1)
            reward = np.where(keep, 0.0, reward)
        return q1, qd1, task1, t1, reward, done, success

    def _step_locomotion(self, q, qd, task, a, f0):
        fam, c = self.family, self.c
        x, z, x0 = task[:, 0], task[:, 1], task[:, 3]
        tip_z = z[:, None] + f0.tip[:, :, 2]
        touch = np.clip(1.0 - tip_z / fam.contact_band, 0.0, 1.0)
        touch[:, 0] = 0.0
        w = touch * c.mass / (c.mass + physics.MASS_SOFTENING)
        wsum = w.sum(-1)
        safe = np.where(wsum > 0, wsum, 1.0)
        weight = c.mass.sum(-1) * fam.gravity
        force = w / safe[:, None] * weight[:, None]
        tau = physics.external_torque(c, f0, fam.gravity, force)
        q1, qd1 = physics.integrate(c, q, qd, a, tau, fam.dt)
        f1 = physics.forward_kinematics(c, q1)
        slide = ((f1.tip[:, :, 0] - f0.tip[:, :, 0]) * w).sum(-1) / safe
        dx = np.where(wsum > 0, -slide, task[:, 2] * fam.dt)
        x1 = x + dx
        z1 = self._support(f1)
        fallen = z1 < fam.fall_fraction * self.nominal_height
        ctrl = fam.ctrl_cost * (a * a).sum(-1)
        travelled = x1 - x0
        if fam.reward_mode == "dense":
            reward = dx - ctrl
        else:
            reward = (travelled >= fam.success_distance).astype(float)
        reward = reward + np.where(fallen, fam.fall_penalty, 0.0)
        success = (travelled >= fam.success_distance) & ~fallen
        task1 = np.stack([x1, z1, dx / fam.dt, x0, fallen.astype(float)], axis=-1)
        return q1, qd1, task1, reward, fallen, success

    def _step_grasp(self, q, qd, task, a, f0, t):
        fam, c = self.family, self.c
        tau = physics.external_torque(c, f0, fam.gravity)
        q1, qd1 = physics.integrate(c, q, qd, a, tau, fam.dt)
        f1 = physics.forward_kinematics(c, q1)
        ee = f1.tip[:, self.layout.palm]
        obj = task[:, :3]
        attached = task[:, 3] > 0.5
        closure = self._closure(q1)
        near = np.linalg.norm(ee - obj, axis=-1) < fam.grasp_radius
        attached = np.where(attached, closure >= fam.open_threshold, near & (closure > fam.close_threshold))
        obj1 = np.where(attached[:, None], ee, obj)
        at_goal = attached & (np.linalg.norm(obj1 - np.array(fam.goal_pos), axis=-1) < fam.goal_radius)
        reward = at_goal.astype(float)
        if fam.reward_mode == "dense":
            dist = np.linalg.norm(ee - obj1, axis=-1) + np.linalg.norm(obj1 - np.array(fam.goal_pos), axis=-1)
            # open fingers cost a little, otherwise nothing pulls the policy towards a grasp
            reward = reward - dist - fam.grip_cost * (1.0 - closure)
        reached = (task[:, 4] > 0.5) | at_goal
        task1 = np.concatenate([obj1, attached[:, None].astype(float), reached[:, None].astype(float)], axis=-1)
        done = np.zeros(self.B, dtype=bool)
        return q1, qd1, task1, reward, done, reached


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _single(model, family) -> VecEnv:
    return VecEnv([model], family)


def reset(model: RobotModel, family: EnvFamily, seed) -> EnvState:
    """Initial state: joint angles jittered by ``init_noise`` and clamped to range."""
    env = _single(model, family)
    q, qd, task, t = env.reset([_rng(seed)])
    return _pack(env, q, qd, task, t)


def _pack(env: VecEnv, q, qd, task, t) -> EnvState:
    return EnvState(q[0].copy(), qd[0].copy(), env.tips_world(q, task)[0], int(t[0]), task[0].copy())


def observe(model: RobotModel, family: EnvFamily, state: EnvState) -> np.ndarray:
    env = _single(model, family)
    return env.observe(state.q[None], state.qd[None], state.task[None], np.array([state.step]))[0]


def step(model: RobotModel, state: EnvState, action, family: EnvFamily) -> tuple[EnvState, float, bool]:
    """One integrator step. Raises NumericalDivergence on non-finite input or output."""
    a = np.asarray(action, dtype=float)
    env = _single(model, family)
    if a.shape != (env.nj,):
        raise ValueError(f"action has shape {a.shape}, expected ({env.nj},)")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qd))):
        raise NumericalDivergence(state.step, "non-finite state or action")
    q, qd, task, t, r, done, _ = env.step(
        state.q[None], state.qd[None], state.task[None], np.array([state.step]), a[None]
    )
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd)) and np.isfinite(r[0])):
        raise NumericalDivergence(state.step)
    return _pack(env, q, qd, task, t), float(r[0]), bool(done[0])


Policy = Callable[[np.ndarray], np.ndarray]


def rollout(model: RobotModel, family: EnvFamily, policy: Policy, seed, horizon: int | None = None) -> list[TransitionTuple]:
    """Run ``policy`` (observation -> action) from ``reset(seed)``; rewards are unshaped."""
    horizon = family.horizon if horizon is None else horizon
    env = _single(model, family)
    q, qd, task, t = env.reset([_rng(seed)])
    out: list[TransitionTuple] = []
    obs = env.observe(q, qd, task, t)[0]
    for k in range(horizon):
        a = np.asarray(policy(obs), dtype=float)
        if not np.all(np.isfinite(a)):
            raise NumericalDivergence(k, "policy produced non-finite action")
        a = np.clip(a, -1.0, 1.0)
        q, qd, task, t, r, done, _ = env.step(q, qd, task, t, a[None])
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise NumericalDivergence(k)
        nxt = env.observe(q, qd, task, t)[0]
        out.append(TransitionTuple(obs, a, nxt, float(r[0]), bool(done[0]), model.beta))
        obs = nxt
        if done[0]:
            break
    return out


@dataclass
class BatchRollout:
    """Lockstep episodes; arrays are (B, T, ...) with ``mask`` marking live steps."""

    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    betas: np.ndarray
    success: np.ndarray  # (B,)
    fallen: np.ndarray  # (B,)

    @property
    def returns(self) -> np.ndarray:
        return (self.rewards * self.mask).sum(axis=1)

    @property
    def n_steps(self) -> int:
        return int(self.mask.sum())


def rollout_batch(models: list[RobotModel], family: EnvFamily, act, rngs: list[np.random.Generator], horizon: int | None = None, on_step=None) -> BatchRollout:
    """Roll out one episode per model in lockstep.

    ``act(obs)`` maps a (B, obs_dim) array to (B, act_dim) actions; the
    actions are recorded as returned and clamped by the environment.
    ``on_step(obs, action, reward, next_obs, done, live)`` is called after
    every lockstep, before the next action is chosen.
    """
    horizon = family.horizon if horizon is None else horizon
    env = VecEnv(models, family)
    B = env.B
    q, qd, task, t = env.reset(rngs)
    live = np.ones(B, dtype=bool)
    success = np.zeros(B, dtype=bool)
    O, A, O2, R, D, M = [], [], [], [], [], []
    obs = env.observe(q, qd, task, t)
    for k in range(horizon):
        a = np.asarray(act(obs), dtype=float)
        if not np.all(np.isfinite(a[live])):
            raise NumericalDivergence(k, "policy produced non-finite action")
        q, qd, task, t, r, done, succ = env.step(q, qd, task, t, a, active=live)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd)) and np.all(np.isfinite(r))):
            raise NumericalDivergence(k)
        nxt = env.observe(q, qd, task, t)
        O.append(obs), A.append(a), O2.append(nxt), R.append(r), D.append(done & live), M.append(live.copy())
        if on_step is not None:
            on_step(obs, a, r, nxt, done & live, live)
        success |= succ & live
        live = live & ~done
        obs = nxt
        if not live.any():
            break
    stack = lambda xs, dim: np.stack(xs, axis=1) if xs else np.zeros((B, 0) + dim)
    fallen = task[:, 4] > 0.5 if family.family_id == LOCOMOTION else np.zeros(B, dtype=bool)
    obs_dim = 2 * env.nj + family.aux_dim
    return BatchRollout(
        stack(O, (obs_dim,)), stack(A, (env.nj,)), stack(O2, (obs_dim,)),
        stack(R, ()), stack(D, ()).astype(bool), stack(M, ()).astype(bool),
        env.betas.copy(), success, fallen,
    )


def write_trajectory_csv(path, trajectory: list[TransitionTuple], n_joints: int) -> None:
    """One row per transition: step, beta, q..., qdot..., action..., reward, done.

    ``q`` and ``qdot`` are read from the observation before the step (the
    velocity block is unscaled back to rad/s).
    """
    import csv

    header = (
        ["step", "beta"]
        + [f"q{i}" for i in range(n_joints)]
        + [f"qdot{i}" for i in range(n_joints)]
        + [f"action{i}" for i in range(n_joints)]
        + ["reward", "done"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, tr in enumerate(trajectory):
            q = tr.s[:n_joints]
            qd = tr.s[n_joints : 2 * n_joints] / VELOCITY_SCALE
            w.writerow([k, repr(tr.beta), *map(repr, map(float, q)), *map(repr, map(float, qd)), *map(repr, map(float, tr.a)), repr(tr.r), int(tr.done)])
