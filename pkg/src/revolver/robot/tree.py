"""Kinematic trees and the plain-text robot description format.

A description lists one ``body`` line per node and one ``joint`` line per
edge::

    # two-link arm
    body base parent=none length=0,0,0 mass=1 inertia=0.01,0.01,0.01
    body link parent=base length=0.5,0,0 mass=1.0 inertia=0.001,0.02,0.02
    joint child=link axis=0,0,1 motor=2 damping=0.5 range=-1.5,1.5

``length`` holds non-negative per-axis extents of the segment running from
the joint to the body tip. The optional ``dir`` field holds one sign per axis
(default ``1,1,1``) so that segments may point along negative axes; the
signed segment vector is ``dir * length``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "Body",
    "Joint",
    "KinematicTree",
    "DescriptionError",
    "parse_robot_description",
    "format_robot_description",
    "load_robot",
    "asset_names",
]


class DescriptionError(ValueError):
    """Raised for malformed or invalid robot descriptions."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class Body:
    name: str
    parent: int | None
    length: Vec3
    mass: float
    inertia: Vec3
    dir: Vec3 = (1.0, 1.0, 1.0)

    @property
    def segment(self) -> np.ndarray:
        """Signed joint-to-tip vector in the body frame."""
        return np.asarray(self.dir) * np.asarray(self.length)


@dataclass(frozen=True)
class Joint:
    child: int
    axis: Vec3
    motor: float
    damping: float
    range: tuple[float, float]


@dataclass(frozen=True)
class KinematicTree:
    """Rooted tree of bodies in canonical pre-order.

    Body 0 is the root. Children are visited in name order, so the layout
    does not depend on the order in which a description declares bodies.
    ``joints[i]`` is the joint whose child is body ``i + 1``.
    """

    bodies: tuple[Body, ...]
    joints: tuple[Joint, ...]
    _children: tuple[tuple[int, ...], ...] = field(default=(), repr=False, compare=False)

    @staticmethod
    def ordered(bodies, joints) -> "KinematicTree":
        """Validate a tree whose bodies are already listed parents-first.

        Used for augmented and interpolated trees whose node order is fixed
        by a morphology correspondence rather than by names.
        """
        bodies, joints = tuple(bodies), tuple(joints)
        _validate_values(bodies, joints)
        if not bodies or bodies[0].parent is not None:
            raise DescriptionError("body 0 must be the root")
        for i, b in enumerate(bodies[1:], start=1):
            if b.parent is None:
                raise DescriptionError("multiple roots")
            if b.parent >= i:
                raise DescriptionError(f"body {b.name!r} listed before its parent")
        if len(joints) != len(bodies) - 1 or any(j.child != i + 1 for i, j in enumerate(joints)):
            raise DescriptionError("joints must be listed in body order")
        return KinematicTree(bodies, joints)

    @staticmethod
    def build(bodies, joints) -> "KinematicTree":
        """Validate arbitrary-order bodies/joints and return the canonical tree.

        ``bodies`` carry parent indices into the given list and ``joints``
        carry child indices into it.
        """
        bodies = list(bodies)
        joints = list(joints)
        _validate_values(bodies, joints)
        n = len(bodies)
        names = [b.name for b in bodies]
        if len(set(names)) != n:
            dup = sorted({x for x in names if names.count(x) > 1})
            raise DescriptionError(f"duplicate body name {dup[0]!r}")
        roots = [i for i, b in enumerate(bodies) if b.parent is None]
        if not roots:
            raise DescriptionError("no root body (cycle detected)")
        if len(roots) > 1:
            raise DescriptionError("multiple roots: " + ", ".join(names[i] for i in roots))
        kids: list[list[int]] = [[] for _ in range(n)]
        for i, b in enumerate(bodies):
            if b.parent is not None:
                kids[b.parent].append(i)
        order: list[int] = []
        stack = [roots[0]]
        while stack:
            i = stack.pop()
            order.append(i)
            stack.extend(sorted(kids[i], key=lambda c: names[c], reverse=True))
        if len(order) != n:
            missing = sorted(names[i] for i in set(range(n)) - set(order))
            raise DescriptionError(f"cycle detected through body {missing[0]!r}")
        if len(joints) != n - 1:
            raise DescriptionError(f"expected {n - 1} joints for {n} bodies, got {len(joints)}")
        joint_of: dict[int, Joint] = {}
        for j in joints:
            if j.child == roots[0]:
                raise DescriptionError(f"joint attached to root body {names[j.child]!r}")
            if j.child in joint_of:
                raise DescriptionError(f"body {names[j.child]!r} has more than one joint")
            joint_of[j.child] = j
        newpos = {old: new for new, old in enumerate(order)}
        new_bodies = tuple(
            replace(bodies[old], parent=None if bodies[old].parent is None else newpos[bodies[old].parent])
            for old in order
        )
        new_joints = tuple(replace(joint_of[old], child=newpos[old]) for old in order[1:])
        children = [[] for _ in range(n)]
        for i, b in enumerate(new_bodies):
            if b.parent is not None:
                children[b.parent].append(i)
        return KinematicTree(new_bodies, new_joints, tuple(tuple(c) for c in children))

    def __post_init__(self):
        if not self._children:
            children = [[] for _ in self.bodies]
            for i, b in enumerate(self.bodies):
                if b.parent is not None:
                    children[b.parent].append(i)
            object.__setattr__(self, "_children", tuple(tuple(c) for c in children))

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def children(self, i: int) -> tuple[int, ...]:
        return self._children[i]

    def index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def joint_of(self, body: int) -> Joint:
        if body == 0:
            raise ValueError("root body has no joint")
        return self.joints[body - 1]

    def depth(self, i: int) -> int:
        d = 0
        while self.bodies[i].parent is not None:
            i = self.bodies[i].parent
            d += 1
        return d

    def subtree(self, i: int) -> list[int]:
        out, stack = [], [i]
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(self._children[k])
        return sorted(out)

    def reroot(self, name: str) -> "KinematicTree":
        """Return the same undirected tree hung from body ``name``.

        Every edge keeps its joint; edges on the path to the new root flip
        direction, so their joint moves to the former parent.
        """
        r = self.index(name)
        if r == 0:
            return self
        path = [r]
        while self.bodies[path[-1]].parent is not None:
            path.append(self.bodies[path[-1]].parent)
        bodies = list(self.bodies)
        joints = {j.child: j for j in self.joints}
        bodies[r] = replace(bodies[r], parent=None)
        moved = {}
        for lower, upper in zip(path, path[1:]):
            bodies[upper] = replace(bodies[upper], parent=lower)
            moved[upper] = replace(joints[lower], child=upper)
        for lower in path[:-1]:
            del joints[lower]
        joints.update(moved)
        return KinematicTree.build(bodies, list(joints.values()))


_NAME = r"[A-Za-z0-9_.~\-]+"
_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_NUM_RE = re.compile(rf"^{_NUM}$")
_NAME_RE = re.compile(rf"^{_NAME}$")
_BODY_KEYS = {"parent", "length", "mass", "inertia", "dir"}
_JOINT_KEYS = {"child", "axis", "motor", "damping", "range"}


def _numbers(text: str, count: int, key: str, line: int, col: int) -> tuple[float, ...]:
    parts = text.split(",")
    if len(parts) != count:
        raise DescriptionError(f"{key} expects {count} comma-separated numbers", line, col)
    out = []
    for p in parts:
        if not _NUM_RE.match(p):
            raise DescriptionError(f"malformed number {p!r} in {key}", line, col)
        out.append(float(p))
    return tuple(out)


def parse_robot_description(text: str) -> KinematicTree:
    """Parse a robot description document into a validated KinematicTree."""
    raw_bodies: list[tuple[str, str, dict, int]] = []
    raw_joints: list[tuple[str, dict, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        tokens = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]
        kind, kcol = tokens[0]
        if kind not in ("body", "joint"):
            raise DescriptionError(f"expected 'body' or 'joint', got {kind!r}", lineno, kcol)
        rest = tokens[1:]
        name = None
        if kind == "body":
            if not rest or "=" in rest[0][0]:
                raise DescriptionError("body requires a name", lineno, kcol)
            name, ncol = rest[0]
            if not _NAME_RE.match(name):
                raise DescriptionError(f"invalid body name {name!r}", lineno, ncol)
            rest = rest[1:]
        fields: dict[str, tuple[str, int]] = {}
        allowed = _BODY_KEYS if kind == "body" else _JOINT_KEYS
        for tok, col in rest:
            if "=" not in tok:
                raise DescriptionError(f"expected key=value, got {tok!r}", lineno, col)
            key, value = tok.split("=", 1)
            if key not in allowed:
                raise DescriptionError(f"unknown {kind} field {key!r}", lineno, col)
            if key in fields:
                raise DescriptionError(f"duplicate field {key!r}", lineno, col)
            fields[key] = (value, col + len(key) + 1)
        required = allowed - {"dir"}
        missing = sorted(required - fields.keys())
        if missing:
            raise DescriptionError(f"{kind} missing field {missing[0]!r}", lineno, kcol)
        if kind == "body":
            raw_bodies.append((name, fields["parent"][0], fields, lineno))
        else:
            raw_joints.append((fields["child"][0], fields, lineno))

    if not raw_bodies:
        raise DescriptionError("description contains no bodies")
    index = {}
    for i, (name, _, _, lineno) in enumerate(raw_bodies):
        if name in index:
            raise DescriptionError(f"duplicate body name {name!r}", lineno)
        index[name] = i
    bodies = []
    for name, parent, f, lineno in raw_bodies:
        if parent == "none":
            pidx = None
        elif parent in index:
            pidx = index[parent]
        else:
            raise DescriptionError(f"unknown body {parent!r}", lineno, f["parent"][1])
        length = _numbers(f["length"][0], 3, "length", lineno, f["length"][1])
        (mass,) = _numbers(f["mass"][0], 1, "mass", lineno, f["mass"][1])
        inertia = _numbers(f["inertia"][0], 3, "inertia", lineno, f["inertia"][1])
        if "dir" in f:
            sign = _numbers(f["dir"][0], 3, "dir", lineno, f["dir"][1])
            if any(s not in (-1.0, 1.0) for s in sign):
                raise DescriptionError("dir entries must be 1 or -1", lineno, f["dir"][1])
        else:
            sign = (1.0, 1.0, 1.0)
        try:
            _check_body(name, length, mass, inertia)
        except DescriptionError as e:
            raise DescriptionError(str(e), lineno) from None
        bodies.append(Body(name, pidx, length, mass, inertia, sign))
    joints = []
    for child, f, lineno in raw_joints:
        if child not in index:
            raise DescriptionError(f"unknown body {child!r}", lineno, f["child"][1])
        axis = _numbers(f["axis"][0], 3, "axis", lineno, f["axis"][1])
        (motor,) = _numbers(f["motor"][0], 1, "motor", lineno, f["motor"][1])
        (damping,) = _numbers(f["damping"][0], 1, "damping", lineno, f["damping"][1])
        rng = _numbers(f["range"][0], 2, "range", lineno, f["range"][1])
        norm = math.sqrt(sum(a * a for a in axis))
        if norm < 1e-12:
            raise DescriptionError("joint axis must be non-zero", lineno, f["axis"][1])
        axis = tuple(a / norm for a in axis)
        try:
            _check_joint(child, motor, damping, rng)
        except DescriptionError as e:
            raise DescriptionError(str(e), lineno) from None
        joints.append(Joint(index[child], axis, motor, damping, rng))
    return KinematicTree.build(bodies, joints)


def _check_body(name, length, mass, inertia):
    vals = [*length, mass, *inertia]
    if not all(math.isfinite(v) for v in vals):
        raise DescriptionError(f"body {name!r} has non-finite parameters")
    if mass < 0:
        raise DescriptionError(f"negative mass on body {name!r}")
    if min(length) < 0:
        raise DescriptionError(f"negative length on body {name!r}")
    if min(inertia) < 0:
        raise DescriptionError(f"negative inertia on body {name!r}")


def _check_joint(name, motor, damping, rng):
    if not all(math.isfinite(v) for v in (motor, damping, *rng)):
        raise DescriptionError(f"joint {name!r} has non-finite parameters")
    if damping < 0:
        raise DescriptionError(f"negative damping on joint {name!r}")
    if rng[0] > rng[1]:
        raise DescriptionError(f"joint {name!r} range lo > hi")


def _validate_values(bodies, joints):
    n = len(bodies)
    for b in bodies:
        _check_body(b.name, b.length, b.mass, b.inertia)
        if b.parent is not None and not 0 <= b.parent < n:
            raise DescriptionError(f"unknown body index {b.parent}")
    for j in joints:
        if not 0 <= j.child < n:
            raise DescriptionError(f"unknown body index {j.child}")
        _check_joint(bodies[j.child].name, j.motor, j.damping, j.range)


def _fmt(x: float) -> str:
    return repr(float(x))


def format_robot_description(tree: KinematicTree, header: str | None = None) -> str:
    """Serialize a tree; ``parse_robot_description`` round-trips the output exactly."""
    lines = []
    if header:
        lines.extend("# " + h for h in header.splitlines())
    for b in tree.bodies:
        parent = "none" if b.parent is None else tree.bodies[b.parent].name
        text = (
            f"body {b.name} parent={parent} length={','.join(map(_fmt, b.length))} "
            f"mass={_fmt(b.mass)} inertia={','.join(map(_fmt, b.inertia))}"
        )
        if tuple(b.dir) != (1.0, 1.0, 1.0):
            text += f" dir={','.join(str(int(s)) for s in b.dir)}"
        lines.append(text)
    for j in tree.joints:
        lines.append(
            f"joint child={tree.bodies[j.child].name} axis={','.join(map(_fmt, j.axis))} "
            f"motor={_fmt(j.motor)} damping={_fmt(j.damping)} range={_fmt(j.range[0])},{_fmt(j.range[1])}"
        )
    return "\n".join(lines) + "\n"


def asset_names() -> list[str]:
    files = resources.files("revolver").joinpath("assets").iterdir()
    return sorted(p.name[:-6] for p in files if p.name.endswith(".robot"))


def load_robot(name_or_path: str | Path) -> KinematicTree:
    """Load a bundled asset by name (e.g. ``walker``) or a description file by path."""
    p = Path(name_or_path)
    if p.suffix == ".robot" and p.exists():
        return parse_robot_description(p.read_text(encoding="utf-8"))
    res = resources.files("revolver").joinpath("assets", f"{name_or_path}.robot")
    if not res.is_file():
        raise FileNotFoundError(f"no robot asset or file named {str(name_or_path)!r}")
    return parse_robot_description(res.read_text(encoding="utf-8"))
