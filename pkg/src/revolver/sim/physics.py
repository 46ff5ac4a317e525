"""Batched rigid-chain kinematics and per-joint decoupled dynamics.

Every array carries a leading batch axis so that robots sharing one
topology (e.g. all intermediate robots of a matched pair) can be stepped
together. Body 0 is the root; children of the root attach at the root
origin, every other body attaches at its parent's tip. Joint ``i`` drives
body ``i + 1`` and rotates it about an axis expressed in the parent frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..robot.tree import KinematicTree

ARMATURE = 1e-4  # kg m^2 added to every joint's effective inertia
MASS_SOFTENING = 0.01  # kg, contact weight uses m / (m + MASS_SOFTENING)


@dataclass(frozen=True)
class Compiled:
    """Array view of one or more robots with a shared topology."""

    parent: np.ndarray  # (n,), -1 for the root
    seg: np.ndarray  # (B, n, 3)
    mass: np.ndarray  # (B, n)
    inertia: np.ndarray  # (B, n, 3)
    axis: np.ndarray  # (B, nj, 3)
    motor: np.ndarray  # (B, nj)
    damping: np.ndarray  # (B, nj)
    lo: np.ndarray  # (B, nj)
    hi: np.ndarray  # (B, nj)
    eff_inertia: np.ndarray  # (B, nj)
    subtree: np.ndarray  # (n, n) bool, subtree[i, k] = k below or at i
    root_height: np.ndarray  # (B,) half the root's vertical extent

    @property
    def batch(self) -> int:
        return self.mass.shape[0]

    @property
    def n_bodies(self) -> int:
        return len(self.parent)

    @property
    def n_joints(self) -> int:
        return len(self.parent) - 1


def compile_tree(tree: KinematicTree) -> Compiled:
    n = tree.n_bodies
    parent = np.array([-1 if b.parent is None else b.parent for b in tree.bodies])
    seg = np.array([b.segment for b in tree.bodies], dtype=float)[None]
    mass = np.array([b.mass for b in tree.bodies], dtype=float)[None]
    inertia = np.array([b.inertia for b in tree.bodies], dtype=float)[None]
    axis = np.array([j.axis for j in tree.joints], dtype=float).reshape(1, -1, 3)
    motor = np.array([[j.motor for j in tree.joints]], dtype=float).reshape(1, -1)
    damping = np.array([[j.damping for j in tree.joints]], dtype=float).reshape(1, -1)
    lo = np.array([[j.range[0] for j in tree.joints]], dtype=float).reshape(1, -1)
    hi = np.array([[j.range[1] for j in tree.joints]], dtype=float).reshape(1, -1)
    sub = np.zeros((n, n), dtype=bool)
    for k in range(n):
        i = k
        while i >= 0:
            sub[i, k] = True
            i = parent[i]
    partial = Compiled(
        parent, seg, mass, inertia, axis, motor, damping, lo, hi,
        np.zeros((1, n - 1)), sub, np.array([tree.bodies[0].length[2] / 2.0]),
    )
    eff = _effective_inertia(partial)
    return Compiled(**{**partial.__dict__, "eff_inertia": eff})


def stack(items: list[Compiled]) -> Compiled:
    """Concatenate compiled robots of identical topology along the batch axis."""
    first = items[0]
    for c in items[1:]:
        if not np.array_equal(c.parent, first.parent):
            raise ValueError("cannot batch robots with different topologies")
    fields = {}
    for name, val in first.__dict__.items():
        if name in ("parent", "subtree"):
            fields[name] = val
        else:
            fields[name] = np.concatenate([getattr(c, name) for c in items], axis=0)
    return Compiled(**fields)


def rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices for unit ``axis`` (..., 3) and ``angle`` (...)."""
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c, s = np.cos(angle), np.sin(angle)
    t = 1.0 - c
    R = np.empty(np.shape(angle) + (3, 3))
    R[..., 0, 0] = c + x * x * t
    R[..., 0, 1] = x * y * t - z * s
    R[..., 0, 2] = x * z * t + y * s
    R[..., 1, 0] = y * x * t + z * s
    R[..., 1, 1] = c + y * y * t
    R[..., 1, 2] = y * z * t - x * s
    R[..., 2, 0] = z * x * t - y * s
    R[..., 2, 1] = z * y * t + x * s
    R[..., 2, 2] = c + z * z * t
    return R


def _mv(R: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (R * v[:, None, :]).sum(axis=-1)


@dataclass
class Frames:
    origin: np.ndarray  # (B, n, 3) joint origin of each body (root: root origin)
    tip: np.ndarray  # (B, n, 3)
    com: np.ndarray  # (B, n, 3)
    rot: np.ndarray  # (B, n, 3, 3)
    axis_world: np.ndarray  # (B, nj, 3)


def forward_kinematics(c: Compiled, q: np.ndarray) -> Frames:
    """Body frames relative to the root origin for joint angles ``q`` (B, nj)."""
    B, n = q.shape[0], c.n_bodies
    origin = np.zeros((B, n, 3))
    tip = np.zeros((B, n, 3))
    com = np.zeros((B, n, 3))
    rot = np.zeros((B, n, 3, 3))
    axw = np.zeros((B, n - 1, 3))
    rot[:, 0] = np.eye(3)
    seg = np.broadcast_to(c.seg, (B, n, 3))
    axis = np.broadcast_to(c.axis, (B, n - 1, 3))
    local = rotation(axis, q)
    for i in range(1, n):
        p = c.parent[i]
        o = origin[:, p] if p == 0 else tip[:, p]
        Rp = rot[:, p]
        R = Rp @ local[:, i - 1]
        origin[:, i] = o
        rot[:, i] = R
        axw[:, i - 1] = _mv(Rp, axis[:, i - 1])
        d = _mv(R, seg[:, i])
        tip[:, i] = o + d
        com[:, i] = o + 0.5 * d
    return Frames(origin, tip, com, rot, axw)


def _effective_inertia(c: Compiled) -> np.ndarray:
    """Inertia of each joint's distal subtree about its axis, at the zero pose."""
    B = c.batch
    f = forward_kinematics(c, np.zeros((B, c.n_joints)))
    out = np.zeros((B, c.n_joints))
    for i in range(1, c.n_bodies):
        a = f.axis_world[:, i - 1]
        total = np.full(B, ARMATURE)
        for k in np.nonzero(c.subtree[i])[0]:
            r = f.com[:, k] - f.origin[:, i]
            along = (r * a).sum(-1)
            total = total + c.mass[:, k] * ((r * r).sum(-1) - along * along)
            a_body = (f.rot[:, k] * a[:, :, None]).sum(axis=1)  # R^T a
            total = total + (c.inertia[:, k] * a_body * a_body).sum(-1)
        out[:, i - 1] = total
    return out


def subtree_sums(c: Compiled, values: np.ndarray) -> np.ndarray:
    """Sum ``values`` (B, n, ...) over each body's subtree."""
    out = values.copy()
    for k in range(c.n_bodies - 1, 0, -1):
        out[:, c.parent[k]] += out[:, k]
    return out


def external_torque(c: Compiled, f: Frames, gravity: float, contact_force: np.ndarray | None = None) -> np.ndarray:
    """Gravity and ground-reaction torques projected on each joint axis.

    ``contact_force`` (B, n) holds upward forces applied at body tips.
    """
    g = np.array([0.0, 0.0, -gravity])
    m = c.mass
    msum = subtree_sums(c, m)
    mcom = subtree_sums(c, m[..., None] * f.com)
    moment = np.cross(mcom[:, 1:] - msum[:, 1:, None] * f.origin[:, 1:], g)
    if contact_force is not None:
        up = np.array([0.0, 0.0, 1.0])
        fsum = subtree_sums(c, contact_force)
        fpos = subtree_sums(c, contact_force[..., None] * f.tip)
        moment = moment + np.cross(fpos[:, 1:] - fsum[:, 1:, None] * f.origin[:, 1:], up)
    return (moment * f.axis_world).sum(-1)


def integrate(c: Compiled, q, qd, action, torque_ext, dt):
    """Semi-implicit Euler with implicit damping and hard joint limits."""
    inv = 1.0 / c.eff_inertia
    qd_new = (qd + dt * inv * (c.motor * action + torque_ext)) / (1.0 + dt * inv * c.damping)
    q_new = q + dt * qd_new
    below, above = q_new < c.lo, q_new > c.hi
    q_new = np.clip(q_new, c.lo, c.hi)
    qd_new = np.where(below | above, 0.0, qd_new)
    return q_new, qd_new


def kinetic_energy(c: Compiled, qd: np.ndarray) -> np.ndarray:
    return 0.5 * (c.eff_inertia * qd * qd).sum(-1)
