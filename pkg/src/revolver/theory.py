"""Exact checks of where reward shaping moves the optimum, on tabular MDPs.

A family interpolates two transition tensors linearly in beta. Training on
robots drawn uniformly from ``[alpha, alpha + delta]`` with rewards scaled by
``1 + h * beta`` is predicted to yield the optimal policy of the single robot
at ``alpha_prime(alpha, delta, h)``. Everything here is solved exactly
(linear solves and full policy enumeration), so the check has no learning
noise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TabularMdpFamily",
    "ShapedObjectiveResult",
    "ValidationRow",
    "ValidationReport",
    "alpha_prime",
    "policy_values",
    "value_iteration",
    "optimal_policy",
    "shaped_mixture_optimum",
    "validate_theorem",
]

SERIES_H = 1e-8
MAX_POLICIES = 10_000


@dataclass(frozen=True)
class TabularMdpFamily:
    """``T[s, a, s']`` at the two ends, rewards ``R[s, a]``, start distribution ``mu0``."""

    T_source: np.ndarray
    T_target: np.ndarray
    R: np.ndarray
    gamma: float
    mu0: np.ndarray | None = None

    def __post_init__(self):
        S, A = self.R.shape
        for name in ("T_source", "T_target"):
            T = getattr(self, name)
            if T.shape != (S, A, S):
                raise ValueError(f"{name} has shape {T.shape}, expected {(S, A, S)}")
            if np.any(T < 0) or not np.allclose(T.sum(-1), 1.0, atol=1e-12):
                raise ValueError(f"{name} rows must be probability distributions")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("rewards must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.mu0 is None:
            object.__setattr__(self, "mu0", np.full(S, 1.0 / S))

    @property
    def n_states(self) -> int:
        return self.R.shape[0]

    @property
    def n_actions(self) -> int:
        return self.R.shape[1]

    def T(self, beta: float) -> np.ndarray:
        return (1.0 - beta) * self.T_source + beta * self.T_target

    def scaled(self, c: float) -> "TabularMdpFamily":
        return TabularMdpFamily(self.T_source, self.T_target, c * self.R, self.gamma, self.mu0)

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int = 4, n_actions: int = 2, gamma: float = 0.9) -> "TabularMdpFamily":
        """Dirichlet(1) transition rows at both ends and uniform rewards in [0, 1]."""
        Ts = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        Tt = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        R = rng.uniform(0.0, 1.0, (n_states, n_actions))
        return cls(Ts, Tt, R, gamma)


def alpha_prime(alpha: float, delta: float, h: float) -> float:
    """Single robot whose optimal policy matches the shaped window objective.

    Evaluated as ``(sqrt(1 + h*A + h^2*B) - 1) / h`` in the cancellation-free
    form ``(A + h*B) / (sqrt(1 + h*A + h^2*B) + 1)``; for ``h`` below 1e-8 the
    expansion ``alpha + delta/2 + h*delta^2/8`` is returned.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if delta < 0 or h < 0:
        raise ValueError("delta and h must be >= 0")
    if h < SERIES_H:
        return alpha + delta / 2.0 + h * delta * delta / 8.0
    a = 2.0 * alpha + delta
    b = alpha * alpha + alpha * delta + 0.5 * delta * delta
    radicand = 1.0 + h * a + h * h * b
    assert radicand >= 1.0
    return (a + h * b) / (math.sqrt(radicand) + 1.0)


def _policy_matrices(T: np.ndarray, R: np.ndarray, policies: np.ndarray):
    S = R.shape[0]
    idx = np.arange(S)
    P = T[idx[None, :], policies]  # (N, S, S)
    r = R[idx[None, :], policies]  # (N, S)
    return P, r


def policy_values(T: np.ndarray, R: np.ndarray, gamma: float, policies) -> np.ndarray:
    """Exact ``V^pi`` for each deterministic policy (rows of ``policies``)."""
    policies = np.atleast_2d(np.asarray(policies, dtype=int))
    P, r = _policy_matrices(T, R, policies)
    eye = np.eye(R.shape[0])
    return np.linalg.solve(eye[None] - gamma * P, r[..., None])[..., 0]


def value_iteration(family: TabularMdpFamily, beta: float, tol: float = 1e-10, max_iter: int = 100_000):
    """Iterate the Bellman optimality operator until its sup-norm residual is below ``tol``.

    Returns ``(V, policy)`` with the policy greedy in ``V``; ties go to the
    lowest action index.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    T, R, g = family.T(beta), family.R, family.gamma
    V = np.zeros(family.n_states)
    for _ in range(max_iter):
        Q = R + g * T @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    Q = R + g * T @ V
    return V, tuple(int(a) for a in np.argmax(Q, axis=1))


def optimal_policy(family: TabularMdpFamily, beta: float) -> tuple[int, ...]:
    """Exact optimal policy by policy iteration (ties keep the lower action index)."""
    T, R, g = family.T(beta), family.R, family.gamma
    pi = tuple(int(a) for a in np.argmax(R, axis=1))
    for _ in range(1000):
        V = policy_values(T, R, g, [pi])[0]
        Q = R + g * T @ V
        best = Q.max(axis=1)
        # keep the current action unless another is strictly better
        cur = Q[np.arange(len(pi)), pi]
        improved = tuple(int(a) if best[s] > cur[s] + 1e-12 else pi[s] for s, a in enumerate(np.argmax(Q, axis=1)))
        if improved == pi:
            break
        pi = improved
    return pi


@dataclass(frozen=True)
class ShapedObjectiveResult:
    policy: tuple[int, ...]
    value: float
    quadrature_n: int


def _all_policies(family: TabularMdpFamily) -> np.ndarray:
    count = family.n_actions**family.n_states
    if count > MAX_POLICIES:
        raise ValueError(f"enumeration too large: {count} policies (limit {MAX_POLICIES})")
    return np.array(list(itertools.product(range(family.n_actions), repeat=family.n_states)), dtype=int)


def simpson_weights(n: int) -> np.ndarray:
    """Composite Simpson weights on ``n`` (odd) equally spaced nodes of [0, 1]."""
    if n < 3 or n % 2 == 0:
        raise ValueError("quadrature_n must be odd and >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * (n - 1))


def shaped_objectives(family: TabularMdpFamily, alpha: float, delta: float, h: float, quadrature_n: int = 21, policies=None) -> np.ndarray:
    """Window objective of every policy; ``delta == 0`` uses the single robot at alpha."""
    policies = _all_policies(family) if policies is None else policies
    if delta == 0:
        betas, weights = np.array([alpha]), np.array([1.0])
    else:
        betas = alpha + delta * np.linspace(0.0, 1.0, quadrature_n)
        weights = simpson_weights(quadrature_n)
    total = np.zeros(len(policies))
    for beta, w in zip(betas, weights):
        V = policy_values(family.T(beta), family.R, family.gamma, policies)
        total += w * (1.0 + h * beta) * (V @ family.mu0)
    return total


def shaped_mixture_optimum(family: TabularMdpFamily, alpha: float, delta: float, h: float, quadrature_n: int = 21) -> ShapedObjectiveResult:
    """Best deterministic policy for the shaped window objective, by enumeration.

    The objective is ``(1/delta) * integral of (1 + h*beta) * mu0 . V^pi(beta)``
    over ``[alpha, alpha + delta]``. Ties go to the first policy in
    lexicographic order.
    """
    if alpha + delta > 1.0 + 1e-12:
        raise ValueError("alpha + delta must not exceed 1")
    policies = _all_policies(family)
    obj = shaped_objectives(family, alpha, delta, h, quadrature_n, policies)
    k = int(np.argmax(obj))
    return ShapedObjectiveResult(tuple(int(a) for a in policies[k]), float(obj[k]), 1 if delta == 0 else quadrature_n)


@dataclass(frozen=True)
class ValidationRow:
    trial: int
    delta: float
    interval_lo: float
    interval_hi: float
    alpha_prime: float
    contained: bool


@dataclass(frozen=True)
class ValidationReport:
    alpha: float
    h: float
    rows: tuple[ValidationRow, ...]

    def agreement(self, delta: float) -> float:
        hits = [r.contained for r in self.rows if r.delta == delta]
        return float(np.mean(hits)) if hits else float("nan")

    @property
    def deltas(self) -> list[float]:
        return sorted({r.delta for r in self.rows}, reverse=True)

    def monotone(self) -> bool:
        """Agreement never decreases as delta shrinks."""
        rates = [self.agreement(d) for d in self.deltas]
        return all(b >= a for a, b in zip(rates, rates[1:]))


def _matching_interval(family, target, center, grid, cache):
    """Connected beta-interval where the pointwise optimum equals ``target``.

    The interval around ``center`` is taken when the policy is optimal there,
    otherwise the matching grid run nearest to ``center``. Boundaries are
    bracketed on the grid and refined by bisection. Returns ``(nan, nan)`` if
    the policy is never pointwise optimal.
    """

    def opt(b):
        b = float(b)
        if b not in cache:
            cache[b] = optimal_policy(family, b)
        return cache[b]

    def refine(inside, outside):
        for _ in range(40):
            mid = 0.5 * (inside + outside)
            if opt(mid) == target:
                inside = mid
            else:
                outside = mid
        return inside

    def extend(start, points):
        last = start
        for b in points:
            if opt(b) != target:
                return refine(last, b)
            last = b
        return last

    if opt(center) != target:
        hits = [b for b in grid if opt(b) == target]
        if not hits:
            return math.nan, math.nan
        center = min(hits, key=lambda b: abs(b - center))
    lo = extend(center, grid[grid < center][::-1])
    hi = extend(center, grid[grid > center])
    return float(lo), float(hi)


def validate_theorem(
    family,
    alpha: float,
    deltas,
    h: float,
    trials: int,
    rng: np.random.Generator,
    quadrature_n: int = 21,
    grid_n: int = 201,
    n_states: int = 4,
    n_actions: int = 2,
    gamma: float = 0.9,
) -> ValidationReport:
    """Compare the shaped-window optimum with the pointwise optimum at ``alpha_prime``.

    ``family`` is either a fixed TabularMdpFamily (reused for every trial) or
    ``None`` to draw a fresh random family per trial from ``rng``. A trial is
    counted as contained when ``alpha_prime`` lies in the beta-interval on
    which the pointwise optimal policy equals the window optimum.
    """
    rows = []
    grid = np.linspace(0.0, 1.0, grid_n)
    for trial in range(trials):
        fam = family if family is not None else TabularMdpFamily.random(rng, n_states, n_actions, gamma)
        cache: dict[float, tuple] = {}
        for delta in deltas:
            if alpha + delta > 1.0 + 1e-12:
                raise ValueError(f"alpha + delta exceeds 1 for delta={delta}")
            ap = alpha_prime(alpha, delta, h)
            mix = shaped_mixture_optimum(fam, alpha, delta, h, quadrature_n).policy
            lo, hi = _matching_interval(fam, mix, ap, grid, cache)
            contained = bool(not math.isnan(lo) and lo <= ap <= hi)
            rows.append(ValidationRow(trial, float(delta), lo, hi, ap, contained))
    return ValidationReport(alpha, h, tuple(rows))
