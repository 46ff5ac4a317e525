"""Morphology matching between two kinematic trees.

Both trees are hung from a chosen root each and then grown with zero-size
bodies until they are isomorphic. Children are paired recursively so that
the number of added bodies is minimal; ties go to the pairing with the
smaller squared parameter distance, then to node names.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tree import Body, Joint, KinematicTree

__all__ = ["MorphologyCorrespondence", "match_morphology", "node_params"]

# Exhaustive sibling search up to this many children per side.
EXHAUSTIVE_CHILDREN = 5


def node_params(tree: KinematicTree, i: int) -> np.ndarray:
    """Interpolatable scalars of body ``i`` and the joint above it."""
    b = tree.bodies[i]
    vals = [*b.segment, b.mass, *b.inertia]
    if i > 0:
        j = tree.joint_of(i)
        vals += [j.motor, j.damping, j.range[0], j.range[1]]
    return np.asarray(vals, dtype=float)


@dataclass(frozen=True)
class MorphologyCorrespondence:
    """Result of matching two trees.

    The augmented trees share one node order, so ``node_pairs`` is the
    identity over augmented indices. ``source_joints`` / ``target_joints``
    map each joint index of the original tree to its augmented index.
    """

    source: KinematicTree
    target: KinematicTree
    augmented_source: KinematicTree
    augmented_target: KinematicTree
    node_pairs: tuple[tuple[int, int], ...]
    added_in_source: frozenset[int]
    added_in_target: frozenset[int]
    source_joints: tuple[int, ...]
    target_joints: tuple[int, ...]

    @property
    def n_added(self) -> int:
        return len(self.added_in_source) + len(self.added_in_target)

    @property
    def n_joints(self) -> int:
        return self.augmented_source.n_joints

    def joint_map(self, side: str) -> tuple[int, ...]:
        if side == "source":
            return self.source_joints
        if side == "target":
            return self.target_joints
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")

    def action_pad_map(self, side: str) -> np.ndarray:
        return np.asarray(self.joint_map(side), dtype=int)

    def state_pad_map(self, side: str, aux_dim: int = 0) -> np.ndarray:
        """Index map for state vectors laid out as ``[q, qdot, aux]``."""
        m = self.action_pad_map(side)
        n = self.n_joints
        return np.concatenate([m, n + m, 2 * n + np.arange(aux_dim)])

    @cached_property
    def sq_distance(self) -> float:
        a, b = self.augmented_source, self.augmented_target
        return float(sum(np.sum((node_params(a, i) - node_params(b, i)) ** 2) for i in range(a.n_bodies)))


@dataclass(frozen=True)
class _Cost:
    added: int
    sq: float
    pairs: tuple  # ((child_s | None, child_t | None), ...)


class _RootedMatcher:
    def __init__(self, s: KinematicTree, t: KinematicTree):
        self.s, self.t = s, t
        self.memo: dict[tuple[int, int], _Cost] = {}
        self.size_s = [len(s.subtree(i)) for i in range(s.n_bodies)]
        self.size_t = [len(t.subtree(i)) for i in range(t.n_bodies)]
        self.norm_s = [sum(float(np.sum(node_params(s, k) ** 2)) for k in s.subtree(i)) for i in range(s.n_bodies)]
        self.norm_t = [sum(float(np.sum(node_params(t, k) ** 2)) for k in t.subtree(i)) for i in range(t.n_bodies)]

    def cost(self, u: int, v: int) -> _Cost:
        if (u, v) in self.memo:
            return self.memo[(u, v)]
        s, t = self.s, self.t
        own = float(np.sum((node_params(s, u) - node_params(t, v)) ** 2))
        cs = sorted(s.children(u), key=lambda c: s.bodies[c].name)
        ct = sorted(t.children(v), key=lambda c: t.bodies[c].name)
        if max(len(cs), len(ct)) <= EXHAUSTIVE_CHILDREN:
            best = self._exhaustive(cs, ct)
        else:
            best = self._assignment(cs, ct)
        added, sq, pairs = best
        out = _Cost(added, own + sq, tuple(pairs))
        self.memo[(u, v)] = out
        return out

    def _option(self, pairs):
        added, sq = 0, 0.0
        for a, b in pairs:
            if a is None:
                added += self.size_t[b]
                sq += self.norm_t[b]
            elif b is None:
                added += self.size_s[a]
                sq += self.norm_s[a]
            else:
                c = self.cost(a, b)
                added += c.added
                sq += c.sq
        return added, sq

    def _names(self, pairs):
        return tuple(sorted(
            (self.s.bodies[a].name if a is not None else "", self.t.bodies[b].name if b is not None else "")
            for a, b in pairs
        ))

    def _exhaustive(self, cs, ct):
        best, best_key = None, None
        for pairs in _partial_injections(cs, ct):
            added, sq = self._option(pairs)
            key = (added, round(sq, 9), self._names(pairs))
            if best_key is None or key < best_key:
                best, best_key = (added, sq, pairs), key
        return best

    def _assignment(self, cs, ct):
        m, n = len(cs), len(ct)
        scale = 1.0 + 2.0 * (sum(self.norm_s[a] for a in cs) + sum(self.norm_t[b] for b in ct))
        big = 1e6 * scale * (m + n + 1) * (max(self.size_s + self.size_t) + 1)
        w = np.full((m + n, n + m), big)
        for i, a in enumerate(cs):
            for j, b in enumerate(ct):
                c = self.cost(a, b)
                w[i, j] = c.added * scale + c.sq
            w[i, n + i] = self.size_s[a] * scale + self.norm_s[a]
        for j, b in enumerate(ct):
            w[m + j, j] = self.size_t[b] * scale + self.norm_t[b]
        w[m:, n:] = 0.0
        rows, cols = linear_sum_assignment(w)
        pairs = []
        for r, c in zip(rows, cols):
            if r < m and c < n:
                pairs.append((cs[r], ct[c]))
            elif r < m:
                pairs.append((cs[r], None))
            elif c < n:
                pairs.append((None, ct[c]))
        added, sq = self._option(pairs)
        return added, sq, pairs


def _partial_injections(a, b):
    """All ways to pair items of ``a`` with distinct items of ``b``; leftovers unpaired."""
    if not a:
        yield [(None, y) for y in b]
        return
    head, tail = a[0], a[1:]
    for rest in _partial_injections(tail, b):
        yield [(head, None)] + rest
    for k, y in enumerate(b):
        others = b[:k] + b[k + 1 :]
        for rest in _partial_injections(tail, others):
            yield [(head, y)] + rest


def _padded_body(partner: Body, name: str, parent: int) -> Body:
    return Body(name, parent, (0.0, 0.0, 0.0), 0.0, (0.0, 0.0, 0.0), partner.dir)


def _padded_joint(partner: Joint, child: int) -> Joint:
    return Joint(child, partner.axis, 0.0, 0.0, (0.0, 0.0))


def _fresh(name: str, taken: set[str]) -> str:
    if name not in taken:
        return name
    for k in itertools.count(1):
        cand = f"{name}~pad{k}"
        if cand not in taken:
            return cand
    raise AssertionError("unreachable")


def _assemble(s: KinematicTree, t: KinematicTree, matcher: _RootedMatcher, prefer: str = "source"):
    """Lay out both augmented trees in one shared pre-order.

    Siblings are ordered by the names on the ``prefer`` side; padded
    siblings (which only have a name on the other side) come last.
    """
    sb, tb, sj, tj = [], [], [], []
    added_s, added_t = set(), set()
    origin_s: dict[int, int] = {}
    origin_t: dict[int, int] = {}
    taken_s = {b.name for b in s.bodies}
    taken_t = {b.name for b in t.bodies}

    def visit(u, v, parent):
        idx = len(sb)
        bs = s.bodies[u] if u is not None else None
        bt = t.bodies[v] if v is not None else None
        if bs is None:
            name = _fresh(bt.name, taken_s)
            taken_s.add(name)
            bs = _padded_body(bt, name, parent)
            added_s.add(idx)
        else:
            origin_s[idx] = u
            bs = Body(bs.name, parent, bs.length, bs.mass, bs.inertia, bs.dir)
        if bt is None:
            name = _fresh(bs.name, taken_t)
            taken_t.add(name)
            bt = _padded_body(bs, name, parent)
            added_t.add(idx)
        else:
            origin_t[idx] = v
            bt = Body(bt.name, parent, bt.length, bt.mass, bt.inertia, bt.dir)
        sb.append(bs)
        tb.append(bt)
        if parent is not None:
            js = s.joint_of(u) if u is not None else None
            jt = t.joint_of(v) if v is not None else None
            js = Joint(idx, js.axis, js.motor, js.damping, js.range) if js else _padded_joint(jt, idx)
            jt = Joint(idx, jt.axis, jt.motor, jt.damping, jt.range) if jt else _padded_joint(js, idx)
            sj.append(js)
            tj.append(jt)
        if u is not None and v is not None:
            pairs = list(matcher.cost(u, v).pairs)
        elif u is not None:
            pairs = [(c, None) for c in s.children(u)]
        else:
            pairs = [(None, c) for c in t.children(v)]

        def order(p):
            a, b = p if prefer == "source" else p[::-1]
            first, second = (s, t) if prefer == "source" else (t, s)
            return (0, first.bodies[a].name) if a is not None else (1, second.bodies[b].name)

        for a, b in sorted(pairs, key=order):
            visit(a, b, idx)

    visit(0, 0, None)
    aug_s = KinematicTree.ordered(sb, sj)
    aug_t = KinematicTree.ordered(tb, tj)
    return aug_s, aug_t, added_s, added_t, origin_s, origin_t


def _joint_map(original: KinematicTree, rerooted: KinematicTree, aug: KinematicTree, origin: dict[int, int]):
    """Map joints of the declared tree to augmented joint indices via edges."""
    name_to_aug = {rerooted.bodies[r].name: a for a, r in origin.items()}
    out = []
    for j in original.joints:
        child = original.bodies[j.child].name
        parent = original.bodies[original.bodies[j.child].parent].name
        ac, ap = name_to_aug[child], name_to_aug[parent]
        # An edge reversed by rerooting carries its joint on the former parent.
        out.append((ac if aug.bodies[ac].parent == ap else ap) - 1)
    return tuple(out)


def match_morphology(source: KinematicTree, target: KinematicTree) -> MorphologyCorrespondence:
    """Pad two trees into isomorphic augmented trees with the fewest added bodies.

    Every (source root, target root) pair is tried. Ties on the added count
    prefer keeping the declared roots, then the smaller squared parameter
    distance, then root names.
    """
    best = None
    for rs, rt in itertools.product(range(source.n_bodies), range(target.n_bodies)):
        s = source.reroot(source.bodies[rs].name)
        t = target.reroot(target.bodies[rt].name)
        m = _RootedMatcher(s, t)
        c = m.cost(0, 0)
        key = (c.added, (rs != 0) + (rt != 0), round(c.sq, 9), source.bodies[rs].name, target.bodies[rt].name)
        if best is None or key < best[0]:
            best = (key, s, t, m)
    _, s, t, m = best
    aug_s, aug_t, added_s, added_t, origin_s, origin_t = _assemble(s, t, m)
    if added_s and not added_t:
        # keep the unpadded target in its own canonical order
        aug_s, aug_t, added_s, added_t, origin_s, origin_t = _assemble(s, t, m, "target")
    return MorphologyCorrespondence(
        source=source,
        target=target,
        augmented_source=aug_s,
        augmented_target=aug_t,
        node_pairs=tuple((i, i) for i in range(aug_s.n_bodies)),
        added_in_source=frozenset(added_s),
        added_in_target=frozenset(added_t),
        source_joints=_joint_map(source, s, aug_s, origin_s),
        target_joints=_joint_map(target, t, aug_t, origin_t),
    )
