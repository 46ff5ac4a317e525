"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
from scipy import stats

from revolver.rl import PgAgent, ReplayBuffer, Td3Agent, Td3Config, pg_update_arrays, td3_update
from revolver.robot import parse_robot_description


def tree_text(parents, names=None, seed=None):
    """Description text for a tree given parent indices (parents[0] is None).

    With ``seed`` the body and joint parameters are randomised.
    """
    n = len(parents)
    names = names or [f"b{i}" for i in range(n)]
    rng = np.random.default_rng(seed) if seed is not None else None
    lines = []
    for i, p in enumerate(parents):
        if rng is None:
            length, mass, inertia = "0.1,0,0", "1", "0.01,0.01,0.01"
        else:
            length = ",".join(f"{x:.3f}" for x in rng.uniform(0, 0.3, 3))
            mass = f"{rng.uniform(0.1, 1.0):.3f}"
            inertia = ",".join(f"{x:.4f}" for x in rng.uniform(0.001, 0.01, 3))
        parent = "none" if p is None else names[p]
        lines.append(f"body {names[i]} parent={parent} length={length} mass={mass} inertia={inertia}")
    for i, p in enumerate(parents):
        if p is None:
            continue
        motor = "1" if rng is None else f"{rng.uniform(0.5, 3):.3f}"
        lines.append(f"joint child={names[i]} axis=0,1,0 motor={motor} damping=0.1 range=-1,1")
    return "\n".join(lines) + "\n"


def make_tree(parents, names=None, seed=None):
    return parse_robot_description(tree_text(parents, names, seed))


# -- brute-force minimal padding oracle ------------------------------------------


def _adjacency(parents):
    n = len(parents)
    adj = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p is not None:
            adj[i].append(p)
            adj[p].append(i)
    return adj


def _canon(adj, root, allowed, parent=None):
    """AHU canonical string of the subtree of ``allowed`` nodes hanging from ``root``."""
    kids = sorted(_canon(adj, c, allowed, root) for c in adj[root] if c != parent and c in allowed)
    return "(" + "".join(kids) + ")"


def _root_closed_subsets(adj, root):
    """Every connected node set containing ``root``."""
    n = len(adj)
    out = set()
    for mask in range(1 << n):
        if not mask >> root & 1:
            continue
        nodes = {i for i in range(n) if mask >> i & 1}
        seen, stack = {root}, [root]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v in nodes and v not in seen:
                    seen.add(v)
                    stack.append(v)
        if seen == nodes:
            out.add(frozenset(nodes))
    return out


def min_added_nodes(parents_a, parents_b) -> int:
    """Fewest zero-size nodes to make two trees isomorphic when grown from chosen roots.

    Enumerates every root pair and every root-containing connected subtree
    of both trees; the answer is ``|A| + |B| - 2 * largest common subtree``.
    """
    adj_a, adj_b = _adjacency(parents_a), _adjacency(parents_b)
    best = None
    for ra, rb in itertools.product(range(len(adj_a)), range(len(adj_b))):
        forms_a = {}
        for s in _root_closed_subsets(adj_a, ra):
            c = _canon(adj_a, ra, s)
            forms_a[c] = max(forms_a.get(c, 0), len(s))
        common = 0
        for s in _root_closed_subsets(adj_b, rb):
            if _canon(adj_b, rb, s) in forms_a:
                common = max(common, len(s))
        cost = len(adj_a) + len(adj_b) - 2 * common
        best = cost if best is None else min(best, cost)
    return best


def free_trees(max_nodes: int):
    """One parent array per isomorphism class of unrooted trees with 1..max_nodes nodes."""
    out = []
    for n in range(1, max_nodes + 1):
        seen = set()
        for ps in itertools.product(*[range(i) for i in range(1, n)]):
            parents = [None, *ps]
            adj = _adjacency(parents)
            key = min(_canon(adj, r, set(range(n))) for r in range(n))
            if key not in seen:
                seen.add(key)
                out.append(parents)
    return out


# -- RL oracles -------------------------------------------------------------------


def _lqr_toy():
    gamma = 0.9

    def dyn(s, a):
        return np.clip(0.9 * s + 0.3 * a, -1, 1)

    def rew(s, a):
        return 1.0 - s * s - 0.1 * a * a

    return gamma, dyn, rew


def lqr_value_iteration():
    """Optimal values on a fine state grid with a dense action grid."""
    gamma, dyn, rew = _lqr_toy()
    S = np.linspace(-1, 1, 801)
    A = np.linspace(-1, 1, 401)
    SS, AA = np.meshgrid(S, A, indexing="ij")
    S2, R = dyn(SS, AA), rew(SS, AA)
    V = np.zeros_like(S)
    for _ in range(5000):
        Vn = (R + gamma * np.interp(S2, S, V)).max(1)
        if np.max(np.abs(Vn - V)) < 1e-12:
            break
        V = Vn
    return S, V


def train_lqr_critic(seed=0, updates=8000):
    gamma, dyn, rew = _lqr_toy()
    rng = np.random.default_rng(seed)
    cfg = Td3Config(gamma=gamma, tau=0.02, target_noise=0.0, noise_clip=0.0, actor_lr=1e-3, critic_lr=1e-3)
    ag = Td3Agent.create(1, 1, (32, 32), rng, cfg)
    buf = ReplayBuffer(20_000, 1, 1)
    s = rng.uniform(-1, 1, (20_000, 1))
    a = rng.uniform(-1, 1, (20_000, 1))
    buf.push_many(s, a, rew(s, a)[:, 0], dyn(s, a), np.zeros(20_000, bool), np.zeros(20_000))
    for _ in range(updates):
        td3_update(ag, buf.sample(256, rng), rng)
    return ag


def flat_grad(gw, gb):
    # same layout as MlpNet.get_flat: W0, b0, W1, b1, ...
    return np.concatenate([g.ravel() for pair in zip(gw, gb) for g in pair])


def central_difference(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        d = np.zeros_like(x)
        d[i] = eps
        g[i] = (f(x + d) - f(x - d)) / (2 * eps)
    return g


def bandit_run(seed: int, updates: int = 500) -> float:
    """Two arms, reward 1 on arm A (action > 0). Returns P(A) after training."""
    rng = np.random.default_rng(seed)
    ag = PgAgent.create(1, 1, (4,), rng, sigma=0.5, actor_lr=0.05, baseline_epochs=1)
    s = np.ones((32, 1))
    for _ in range(updates):
        a = ag.sample(s, rng)
        pg_update_arrays(ag, s, a, (a[:, 0] > 0).astype(float))
    mu = float(ag.actor(np.ones((1, 1)))[0, 0])
    return float(stats.norm.sf(0.0, loc=mu, scale=ag.sigma))


def fuzz_clean(n_ops: int, seed: int) -> int:
    """Random pushes and cleans; returns the number of invariant violations."""
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(64, 1, 1)
    bad = 0
    for _ in range(n_ops):
        if rng.random() < 0.8:
            k = int(rng.integers(1, 8))
            beta = rng.uniform(0, 1, k)
            buf.push_many(np.zeros((k, 1)), np.zeros((k, 1)), np.zeros(k), np.zeros((k, 1)), np.zeros(k, bool), beta)
        else:
            lo, hi = np.sort(rng.uniform(0, 1, 2))
            before = len(buf)
            removed = buf.clean(lo, hi)
            b = buf.all().beta
            if len(b) and (b.min() < lo or b.max() > hi):
                bad += 1
            if before - removed != len(buf):
                bad += 1
        if len(buf) > buf.capacity:
            bad += 1
    return bad
