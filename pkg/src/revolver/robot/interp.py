"""Parameter vectors, interpolated robots and zero padding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .matching import MorphologyCorrespondence, node_params
from .tree import Body, Joint, KinematicTree

__all__ = [
    "ParamVector",
    "RobotModel",
    "flatten_params",
    "materialize",
    "interpolate",
    "linear",
    "pad_state",
    "unpad_state",
    "pad_action",
    "unpad_action",
]

BODY_FIELDS = 7  # segment xyz, mass, inertia xyz
JOINT_FIELDS = 4  # motor, damping, range lo, range hi


def linear(alpha: float) -> float:
    return alpha


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class RobotModel:
    tree: KinematicTree
    beta: float
    family_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


def _flatten(tree: KinematicTree) -> np.ndarray:
    return np.concatenate([node_params(tree, i) for i in range(tree.n_bodies)])


def flatten_params(corr: MorphologyCorrespondence) -> tuple[ParamVector, ParamVector]:
    """Flatten both augmented trees in their shared pre-order."""
    return ParamVector(_flatten(corr.augmented_source)), ParamVector(_flatten(corr.augmented_target))


def _sign(seg: np.ndarray, fallback) -> tuple[float, float, float]:
    return tuple(float(np.sign(x)) if x != 0 else float(f) for x, f in zip(seg, fallback))


def materialize(
    template: KinematicTree,
    values: np.ndarray,
    axes: np.ndarray | None = None,
    dirs=None,
) -> KinematicTree:
    """Rebuild a tree with ``template``'s topology from a flat parameter vector."""
    values = np.asarray(values, dtype=float)
    expected = template.n_bodies * BODY_FIELDS + template.n_joints * JOINT_FIELDS
    if values.shape != (expected,):
        raise ValueError(f"parameter vector has length {values.size}, expected {expected}")
    bodies, joints = [], []
    k = 0
    for i, b in enumerate(template.bodies):
        seg = values[k : k + 3]
        fallback = b.dir if dirs is None else dirs[i]
        bodies.append(
            Body(
                b.name,
                b.parent,
                tuple(float(abs(x)) for x in seg),
                float(values[k + 3]),
                tuple(float(x) for x in values[k + 4 : k + 7]),
                _sign(seg, fallback),
            )
        )
        k += BODY_FIELDS
        if i > 0:
            j = template.joint_of(i)
            axis = j.axis if axes is None else tuple(float(x) for x in axes[i - 1])
            motor, damping, lo, hi = (float(x) for x in values[k : k + 4])
            joints.append(Joint(i, axis, motor, damping, (lo, hi)))
            k += JOINT_FIELDS
    return KinematicTree.ordered(bodies, joints)


def _blend_axes(corr: MorphologyCorrespondence, w: float) -> np.ndarray:
    a_s = np.array([j.axis for j in corr.augmented_source.joints], dtype=float).reshape(-1, 3)
    a_t = np.array([j.axis for j in corr.augmented_target.joints], dtype=float).reshape(-1, 3)
    if w == 0.0:
        return a_s
    if w == 1.0:
        return a_t
    v = (1.0 - w) * a_s + w * a_t
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    degenerate = norm[:, 0] < 1e-8
    out = np.where(degenerate[:, None], a_s, v / np.where(degenerate[:, None], 1.0, norm))
    return out


def interpolate(
    corr: MorphologyCorrespondence,
    alpha: float,
    schedule: Callable[[float], float] = linear,
    family_id: str = "",
) -> RobotModel:
    """Robot with parameters ``(1 - f(alpha)) * theta_S + f(alpha) * theta_T``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    w = float(schedule(alpha))
    theta_s, theta_t = flatten_params(corr)
    values = (1.0 - w) * theta_s.values + w * theta_t.values
    # Names (and sign fallbacks) come from the target only at the endpoint.
    template = corr.augmented_target if w == 1.0 else corr.augmented_source
    tree = materialize(template, values, _blend_axes(corr, w))
    return RobotModel(tree, float(alpha), family_id)


def _check_side(side):
    if side not in ("source", "target"):
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")


def pad_action(vector, corr: MorphologyCorrespondence, side: str) -> np.ndarray:
    _check_side(side)
    v = np.asarray(vector, dtype=float)
    m = corr.action_pad_map(side)
    if v.shape != (len(m),):
        raise ValueError(f"action length {v.size} does not match {side} joint count {len(m)}")
    out = np.zeros(corr.n_joints)
    out[m] = v
    return out


def unpad_action(vector, corr: MorphologyCorrespondence, side: str) -> np.ndarray:
    _check_side(side)
    v = np.asarray(vector, dtype=float)
    if v.shape != (corr.n_joints,):
        raise ValueError(f"action length {v.size} does not match shared joint count {corr.n_joints}")
    return v[corr.action_pad_map(side)].copy()


def pad_state(vector, corr: MorphologyCorrespondence, side: str) -> np.ndarray:
    """Embed ``[q, qdot, aux]`` of the original robot into the shared layout."""
    _check_side(side)
    v = np.asarray(vector, dtype=float)
    nj = len(corr.joint_map(side))
    aux = v.size - 2 * nj
    if v.ndim != 1 or aux < 0:
        raise ValueError(f"state length {v.size} is too short for {nj} {side} joints")
    m = corr.state_pad_map(side, aux)
    out = np.zeros(2 * corr.n_joints + aux)
    out[m] = v
    return out


def unpad_state(vector, corr: MorphologyCorrespondence, side: str) -> np.ndarray:
    _check_side(side)
    v = np.asarray(vector, dtype=float)
    aux = v.size - 2 * corr.n_joints
    if v.ndim != 1 or aux < 0:
        raise ValueError(f"state length {v.size} is too short for {corr.n_joints} shared joints")
    return v[corr.state_pad_map(side, aux)].copy()
