import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import revolver
from revolver.robot import interpolate, load_robot, match_morphology
from revolver.robot.interp import _flatten
from revolver.rl.replay import ReplayBuffer
from revolver.seeding import stream
from revolver.transfer import (
    Learner,
    PhaseRecord,
    RobotCache,
    TrainingError,
    adaptive_extend,
    build_pair,
    evaluate,
    fetch_robot,
    load_config,
    make_family,
    parse_config,
    run_baseline,
    run_phase,
    run_revolver,
    sample_beta,
    shape_reward,
)
from revolver.transfer import orchestrator
from revolver.transfer.config import TransferConfig

ASSETS = Path(revolver.__file__).parent / "assets"

SMALL_TD3 = """
[robots]
source = "walker"
target = "walker_long"
[family]
id = "chain-locomotion"
horizon = 20
[rl]
backend = "td3"
hidden = [8]
batch_size = 16
episodes_per_epoch = 4
buffer_capacity = 5000
[revolver]
delta = 0.3
step = 0.25
epochs_per_phase = 1
cache_size = 21
total_steps = 100000000
eval_episodes = 4
"""


@pytest.fixture(scope="module")
def walker_cfg():
    return load_config(ASSETS / "walker_transfer.toml")


@pytest.fixture(scope="module")
def walker_expert(walker_cfg):
    return Learner.load(ASSETS / "experts" / "walker.npz", walker_cfg.rl_resolved, 0)


@pytest.fixture(scope="module")
def small():
    cfg = parse_config(SMALL_TD3)
    _, _, corr = build_pair(cfg)
    return cfg, RobotCache(corr, cfg.revolver.cache_size, cfg.family.id)


# -- shaping and window sampling --------------------------------------------------


def test_shape_reward_examples():
    assert shape_reward(2.0, 0.5, 1.0) == 3.0
    assert shape_reward(-10.0, 1.0, 1.0) == -20.0
    for r in (-3.0, 0.0, 1.7):
        for beta in (0.0, 0.3, 1.0):
            assert shape_reward(r, beta, 0.0) == r


def test_shape_reward_grid():
    rng = np.random.default_rng(0)
    r, beta, h = rng.uniform(-10, 10, 10_000), rng.uniform(0, 1, 10_000), rng.uniform(0, 5, 10_000)
    out = shape_reward(r, beta, h)
    assert np.array_equal(out, r * (1.0 + h * beta))
    assert np.array_equal(shape_reward(r, beta, 0.0), r)


def test_sample_beta_degenerate_and_clamped():
    rng = np.random.default_rng(0)
    assert all(sample_beta(1.0, 0.1, rng) == 1.0 for _ in range(100))
    draws = sample_beta(0.95, 0.1, rng, 10_000)
    assert draws.min() >= 0.95 and draws.max() <= 1.0


def test_sample_beta_mean():
    draws = sample_beta(0.2, 0.1, np.random.default_rng(1), 10_000)
    assert abs(draws.mean() - 0.25) < 0.003
    assert draws.min() >= 0.2 and draws.max() <= 0.3


# -- robot cache --------------------------------------------------------------------


@pytest.fixture(scope="module")
def hand_cache():
    corr = match_morphology(load_robot("gripper"), load_robot("hand"))
    return RobotCache(corr, 1000, "reach-grasp")


def test_cache_grid_has_exact_endpoints(hand_cache):
    assert hand_cache.grid[0] == 0.0 and hand_cache.grid[-1] == 1.0
    assert fetch_robot(hand_cache, 0.0).tree == hand_cache.corr.augmented_source
    assert fetch_robot(hand_cache, 1.0).tree == hand_cache.corr.augmented_target


def test_fetch_nearest_grid_point(hand_cache):
    m = fetch_robot(hand_cache, 0.50049)
    assert m.beta == pytest.approx(500 / 999, abs=1e-15)
    assert abs(m.beta - 0.50049) <= 0.5 / 999


def test_fetch_error_bounded_by_spacing(hand_cache):
    span = np.max(np.abs(hand_cache.theta_t - hand_cache.theta_s))
    corr = hand_cache.corr
    for beta in np.random.default_rng(0).uniform(0, 1, 20):
        exact = _flatten(interpolate(corr, float(beta)).tree)
        cached = _flatten(fetch_robot(hand_cache, float(beta)).tree)
        assert np.max(np.abs(exact - cached)) <= span / 999 + 1e-12


def test_cache_rejects_single_point_and_empty():
    corr = match_morphology(load_robot("walker"), load_robot("walker_long"))
    with pytest.raises(ValueError):
        RobotCache(corr, 1)
    with pytest.raises(ValueError, match="empty cache"):
        fetch_robot(None, 0.5)


# -- phases ---------------------------------------------------------------------------


def test_zero_epochs_leaves_policy_unchanged(small):
    cfg, cache = small
    learner = Learner.create(cfg.rl_resolved, 20, 8, 0)
    before = learner.actor.get_flat().copy()
    rec = run_phase(learner, 0.0, cfg.revolver, cache, make_family(cfg), np.random.default_rng(0), epochs=0)
    assert np.array_equal(learner.actor.get_flat(), before)
    assert rec.epochs_used == 0 and rec.env_steps == 0 and rec.episodes == 0
    assert math.isnan(rec.mean_raw_reward) and len(learner.buffer) == 0


def test_tiny_window_trains_on_one_robot(small, monkeypatch):
    cfg, cache = small
    seen = []
    real = orchestrator.rollout_batch

    def spy(models, *a, **kw):
        seen.extend(m.beta for m in models)
        return real(models, *a, **kw)

    monkeypatch.setattr(orchestrator, "rollout_batch", spy)
    rc = replace(cfg.revolver, delta=1e-9, shaping_h=0.0)
    learner = Learner.create(cfg.rl_resolved, 20, 8, 0)
    run_phase(learner, 0.5, rc, cache, make_family(cfg), np.random.default_rng(0), epochs=2)
    assert set(seen) == {0.5}
    assert np.all(learner.buffer.beta[: len(learner.buffer)] == 0.5)


def test_expert_self_consistency_at_source(walker_cfg, walker_expert):
    _, _, corr = build_pair(walker_cfg)
    cache = RobotCache(corr, 2, walker_cfg.family.id)
    fam = make_family(walker_cfg)
    ev = evaluate(walker_expert, fetch_robot(cache, 0.0), fam, 50, 0)
    rc = replace(walker_cfg.revolver, delta=1e-9)
    rec = run_phase(walker_expert.clone_policy(walker_cfg.rl_resolved, 0), 0.0, rc, cache, fam, stream(1, "phase"),
                    epochs=2, explore=False, train=False)
    assert abs(rec.mean_raw_reward - ev.mean_reward) <= 0.1 * abs(ev.mean_reward)


def test_divergence_carries_phase_and_epoch(small):
    cfg, cache = small
    learner = Learner.create(cfg.rl_resolved, 20, 8, 0)
    learner.act = lambda o, explore: np.full((len(o), 8), np.nan)
    with pytest.raises(TrainingError) as e:
        run_phase(learner, 0.0, cfg.revolver, cache, make_family(cfg), np.random.default_rng(0), phase=3)
    assert e.value.phase == 3 and e.value.epoch == 0


def _first_epoch(cfg, cache, h, monkeypatch):
    out = []
    real = orchestrator.rollout_batch

    def spy(*a, **kw):
        ro = real(*a, **kw)
        out.append(ro)
        return ro

    monkeypatch.setattr(orchestrator, "rollout_batch", spy)
    # on-policy: no parameter update inside the epoch
    learner = Learner.create(replace(cfg.rl_resolved, backend="pg"), 20, 8, 0)
    rc = replace(cfg.revolver, shaping_h=h)
    run_phase(learner, 0.2, rc, cache, make_family(cfg), np.random.default_rng(4), epochs=1)
    return out[0], learner


def test_shaping_only_changes_stored_rewards(small, monkeypatch):
    cfg, cache = small
    a, la = _first_epoch(cfg, cache, 0.0, monkeypatch)
    b, lb = _first_epoch(cfg, cache, 2.0, monkeypatch)
    for name in ("obs", "actions", "rewards", "mask"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    n = len(la.buffer)
    assert n == len(lb.buffer)
    assert np.array_equal(la.buffer.beta[:n], lb.buffer.beta[:n])
    assert np.array_equal(la.buffer.s[:n], lb.buffer.s[:n])
    assert np.allclose(lb.buffer.r[:n], la.buffer.r[:n] * (1 + 2.0 * la.buffer.beta[:n]), rtol=1e-12, atol=1e-12)


# -- adaptive scheduling -----------------------------------------------------------------


def _rec(raw, success=1.0, phase=1):
    return PhaseRecord(phase, 0.1, epochs_used=1, episodes=8, mean_raw_reward=raw, success_rate=success)


def test_adaptive_extend_cases(caplog):
    rc = TransferConfig(drop_threshold=0.2, max_extensions=2)
    assert not adaptive_extend(_rec(5.0), _rec(5.0), rc)
    assert adaptive_extend(_rec(2.5), _rec(5.0), rc)
    assert not adaptive_extend(_rec(4.5), _rec(5.0), rc)
    # negative rewards: a drop is measured against the magnitude
    assert adaptive_extend(_rec(-8.0), _rec(-5.0), rc)
    assert not adaptive_extend(_rec(-5.5), _rec(-5.0), rc)
    assert not adaptive_extend(_rec(2.5), None, rc)
    assert adaptive_extend(_rec(5.0, success=0.1), _rec(5.0), rc, sparse=True)
    assert not adaptive_extend(_rec(5.0, success=0.1), _rec(5.0), rc, sparse=False)
    with caplog.at_level(logging.WARNING, logger="revolver"):
        assert not adaptive_extend(_rec(2.5), _rec(5.0), rc, extensions_used=2)
    assert any("extension cap" in m for m in caplog.messages)


# -- the full loop ------------------------------------------------------------------------


def test_two_phases_for_half_steps(small):
    cfg, cache = small
    cfg = replace(cfg, revolver=replace(cfg.revolver, step=0.5, delta=0.6, total_steps=math.inf, max_extensions=0))
    expert = Learner.create(cfg.rl_resolved, 20, 8, 0)
    rep = run_revolver(cfg, expert, cache)
    assert rep.alphas == [0.0, 0.5]
    assert rep.final.beta == 1.0


def test_alphas_increase_and_reach_one(small):
    cfg, cache = small
    cfg = replace(cfg, revolver=replace(cfg.revolver, total_steps=math.inf, max_extensions=1))
    rep = run_revolver(cfg, Learner.create(cfg.rl_resolved, 20, 8, 1), cache)
    al = rep.alphas
    assert all(b > a for a, b in zip(al, al[1:]))
    assert al[-1] + cfg.revolver.step >= 1.0
    assert len(al) == math.ceil(1 / cfg.revolver.step)
    assert rep.env_steps == sum(p.env_steps for p in rep.phases)


def test_buffer_is_pure_after_every_transition(small, monkeypatch):
    cfg, cache = small
    checks = []
    real = ReplayBuffer.clean

    def clean(self, lo, hi):
        removed = real(self, lo, hi)
        b = self.beta[: len(self)]
        checks.append((lo, hi, len(self)))
        assert np.all((b >= lo) & (b <= hi))
        return removed

    monkeypatch.setattr(ReplayBuffer, "clean", clean)
    cfg = replace(cfg, revolver=replace(cfg.revolver, total_steps=math.inf))
    rep = run_revolver(cfg, Learner.create(cfg.rl_resolved, 20, 8, 2), cache)
    assert len(checks) == len(rep.phases)
    assert any(p.buffer_removed > 0 for p in rep.phases)
    for (lo, hi, _), p in zip(checks, rep.phases[1:]):
        assert lo == p.alpha and hi == pytest.approx(min(p.alpha + cfg.revolver.delta, 1.0))


def test_budget_stops_the_loop(small):
    cfg, cache = small
    cfg = replace(cfg, revolver=replace(cfg.revolver, total_steps=150, epochs_per_phase=3))
    rep = run_revolver(cfg, Learner.create(cfg.rl_resolved, 20, 8, 0), cache)
    # budget is checked at epoch boundaries; each epoch is at most 4 x 20 steps
    assert 150 <= rep.env_steps < 150 + 80
    base = run_baseline(cfg, "scratch", cache=cache)
    assert 150 <= base.env_steps < 150 + 80
    assert len(base.phases) == 1 and base.phases[0].alpha == 1.0


def test_missing_expert(small):
    cfg, cache = small
    with pytest.raises(ValueError, match="expert"):
        run_revolver(cfg, None, cache)
    with pytest.raises(ValueError, match="expert"):
        run_baseline(cfg, "direct", None, cache)


def test_identical_robots_keep_expert_reward(walker_cfg, walker_expert):
    cfg = replace(
        walker_cfg,
        robots=replace(walker_cfg.robots, target="walker"),
        revolver=replace(walker_cfg.revolver, step=0.5, delta=0.6, epochs_per_phase=1, total_steps=math.inf, cache_size=11),
    )
    _, _, corr = build_pair(cfg)
    cache = RobotCache(corr, 11, cfg.family.id)
    ev = evaluate(walker_expert, fetch_robot(cache, 0.0), make_family(cfg), cfg.revolver.eval_episodes, 0)
    rep = run_revolver(cfg, walker_expert, cache)
    assert abs(rep.final.mean_reward - ev.mean_reward) <= 0.1 * abs(ev.mean_reward)


def test_checkpoint_round_trip(tmp_path, small):
    cfg, _ = small
    learner = Learner.create(cfg.rl_resolved, 20, 8, 5)
    learner.save(tmp_path / "x.npz")
    back = Learner.load(tmp_path / "x.npz", cfg.rl_resolved, 0)
    obs = np.random.default_rng(0).normal(size=(3, 20))
    assert np.array_equal(back.act(obs, False), learner.act(obs, False))
    with pytest.raises(ValueError, match="backend"):
        Learner.load(tmp_path / "x.npz", replace(cfg.rl_resolved, backend="pg"), 0)
