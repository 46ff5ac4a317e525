import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from revolver.rl import (
    Batch,
    DivergenceError,
    InsufficientSamples,
    MlpNet,
    PgAgent,
    ReplayBuffer,
    Td3Agent,
    Td3Config,
    discounted_returns,
    load_checkpoint,
    pg_gradient,
    pg_objective,
    pg_update,
    pg_update_arrays,
    policy_act,
    save_checkpoint,
    td3_update,
)
from revolver.sim.env import TransitionTuple

from helpers import bandit_run, central_difference, flat_grad, fuzz_clean, lqr_value_iteration, train_lqr_critic

# -- networks and acting -------------------------------------------------------


def test_zero_noise_is_deterministic():
    net = MlpNet.init((4, 8, 2), np.random.default_rng(0), "tanh")
    s = np.array([0.1, -0.2, 0.3, 0.4])
    a = policy_act(net, s, 0.0, np.random.default_rng(1))
    b = policy_act(net, s, 0.0, np.random.default_rng(2))
    assert np.array_equal(a, b)


def test_zero_weight_net_outputs_tanh_of_bias():
    net = MlpNet.zeros((3, 5, 2), "tanh")
    net.biases[-1][:] = [0.3, -1.7]
    np.testing.assert_array_equal(policy_act(net, np.ones(3), 0.0), np.tanh([0.3, -1.7]))


def test_noisy_action_mean_is_close_to_deterministic_action():
    net = MlpNet.init((4, 8, 2), np.random.default_rng(0), "tanh", out_scale=0.5)
    s = np.array([0.5, -0.5, 0.2, 0.1])
    det = policy_act(net, s, 0.0)
    rng = np.random.default_rng(3)
    draws = policy_act(net, np.repeat(s[None], 10_000, 0), 0.1, rng)
    assert np.all(np.abs(draws.mean(0) - det) < 0.02)
    assert np.all(np.abs(draws) <= 1.0)


def test_input_dimension_mismatch():
    net = MlpNet.init((4, 8, 2), np.random.default_rng(0), "tanh")
    with pytest.raises(ValueError, match="dimension"):
        policy_act(net, np.zeros(3), 0.0)


def test_polyak_extremes():
    rng = np.random.default_rng(0)
    live, target = MlpNet.init((3, 4, 1), rng), MlpNet.init((3, 4, 1), rng)
    before = target.get_flat().copy()
    target.polyak(live, 0.0)
    assert np.array_equal(target.get_flat(), before)
    target.polyak(live, 1.0)
    assert np.array_equal(target.get_flat(), live.get_flat())


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    nets = {"actor": MlpNet.init((5, 7, 3), rng, "tanh"), "critic": MlpNet.init((8, 7, 1), rng)}
    save_checkpoint(tmp_path / "c.npz", nets, {"note": "x"})
    loaded, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta == {"note": "x"}
    for k, net in nets.items():
        assert loaded[k].sizes == net.sizes and loaded[k].out_act == net.out_act
        assert loaded[k].get_flat().tobytes() == net.get_flat().tobytes()


# -- TD3 -------------------------------------------------------------------------


def _batch(s, a, r, s2, done=None):
    n = len(r)
    return Batch(s, a, np.asarray(r, float), s2, np.zeros(n, bool) if done is None else done, np.zeros(n))


def test_critic_loss_vanishes_at_bellman_fixed_point():
    # zero critics and zero rewards satisfy the Bellman equation exactly
    rng = np.random.default_rng(0)
    ag = Td3Agent.create(2, 1, (4,), rng)
    for net in (ag.critic1, ag.critic2, ag.critic1_target, ag.critic2_target):
        net.set_flat(np.zeros(net.n_params))
    s = rng.normal(size=(16, 2))
    rep = td3_update(ag, _batch(s, rng.uniform(-1, 1, (16, 1)), np.zeros(16), s), rng)
    assert rep["critic_loss"] < 1e-10


def test_gamma_zero_regresses_to_rewards():
    rng = np.random.default_rng(0)
    ag = Td3Agent.create(1, 1, (16,), rng, Td3Config(critic_lr=1e-2, actor_lr=0.0))
    s = rng.uniform(-1, 1, (64, 1))
    a = rng.uniform(-1, 1, (64, 1))
    r = 0.5 * s[:, 0] - a[:, 0]
    for _ in range(1500):
        td3_update(ag, _batch(s, a, r, rng.normal(size=(64, 1)) * 10), rng, gamma=0.0, policy_delay=10**9)
    assert np.max(np.abs(ag.q1(s, a) - r)) < 0.05


def test_td3_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    ag = Td3Agent.create(1, 1, (4,), rng)
    with pytest.raises(ValueError):
        td3_update(ag, _batch(np.zeros((0, 1)), np.zeros((0, 1)), [], np.zeros((0, 1))), rng)
    with pytest.raises(ValueError):
        td3_update(ag, _batch(np.zeros((2, 1)), np.zeros((2, 1)), [0, 0], np.zeros((2, 1))), rng, gamma=1.0)
    with pytest.raises(DivergenceError, match="divergence"):
        td3_update(ag, _batch(np.zeros((2, 1)), np.zeros((2, 1)), [np.inf, 0], np.zeros((2, 1))), rng)


@pytest.mark.slow
def test_lqr_critic_matches_value_iteration():
    S, V = lqr_value_iteration()
    ag = train_lqr_critic()
    probe = np.linspace(-0.95, 0.95, 100)[:, None]
    q = ag.q1(probe, ag.actor(probe))
    v = np.interp(probe[:, 0], S, V)
    assert np.max(np.abs(q - v) / np.abs(v)) < 0.05


def test_updaters_keep_parameters_finite():
    rng = np.random.default_rng(0)
    ag = Td3Agent.create(3, 2, (8,), rng)
    for _ in range(50):
        b = _batch(rng.normal(size=(32, 3)), rng.uniform(-1, 1, (32, 2)), rng.normal(size=32), rng.normal(size=(32, 3)))
        td3_update(ag, b, rng)
    assert all(n.is_finite() for n in (ag.actor, ag.critic1, ag.critic2, ag.actor_target))
    pg = PgAgent.create(3, 2, (8,), rng)
    for _ in range(20):
        pg_update_arrays(pg, rng.normal(size=(32, 3)), rng.normal(size=(32, 2)), rng.normal(size=32))
    assert pg.actor.is_finite() and pg.baseline.is_finite()


# -- policy gradient -------------------------------------------------------------


def test_zero_advantage_leaves_actor_unchanged():
    rng = np.random.default_rng(0)
    ag = PgAgent.create(2, 1, (4,), rng, normalize=False, optimizer="sgd", baseline_epochs=1)
    ag.baseline.set_flat(np.zeros(ag.baseline.n_params))
    before = ag.actor.get_flat().copy()
    pg_update_arrays(ag, rng.normal(size=(10, 2)), rng.normal(size=(10, 1)), np.zeros(10))
    assert np.array_equal(ag.actor.get_flat(), before)


def test_constant_returns_ignore_stale_baseline_when_normalising():
    rng = np.random.default_rng(1)
    ag = PgAgent.create(2, 1, (4,), rng, normalize=True, baseline_epochs=1)
    before = ag.actor.get_flat().copy()
    for _ in range(5):
        pg_update_arrays(ag, rng.normal(size=(10, 2)), rng.normal(size=(10, 1)), np.zeros(10))
    assert np.array_equal(ag.actor.get_flat(), before)
    pg_update_arrays(ag, rng.normal(size=(10, 2)), rng.normal(size=(10, 1)), np.arange(10.0))
    assert not np.array_equal(ag.actor.get_flat(), before)


def test_discounted_returns_with_terminal_reset():
    r = np.array([1.0, 1.0, 1.0, 1.0])
    done = np.array([False, True, False, False])
    np.testing.assert_allclose(discounted_returns(r, 0.5, done), [1.5, 1.0, 1.5, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(1, 2, 1), (2, 1, 1), (2, 3, 2), (3, 4, 1), (4, 5, 2)]))
def test_score_gradient_matches_finite_differences(seed, sizes):
    rng = np.random.default_rng(seed)
    net = MlpNet.init(sizes, rng, "tanh", out_scale=1.0)
    assert net.n_params <= 50
    s = rng.normal(size=(12, sizes[0]))
    a = rng.normal(size=(12, sizes[-1]))
    adv = rng.normal(size=12)
    gw, gb = pg_gradient(net, s, a, adv, 0.4)
    analytic = flat_grad(gw, gb)
    flat0 = net.get_flat().copy()

    def f(x):
        net.set_flat(x)
        return pg_objective(net, s, a, adv, 0.4)

    numeric = central_difference(f, flat0)
    net.set_flat(flat0)
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
    assert rel < 1e-4


def test_five_parameter_gradient_check():
    rng = np.random.default_rng(0)
    net = MlpNet.init((2, 1, 1), rng, "tanh", out_scale=1.0)
    assert net.n_params == 5
    s, a, adv = rng.normal(size=(20, 2)), rng.normal(size=(20, 1)), rng.normal(size=20)
    gw, gb = pg_gradient(net, s, a, adv, 0.3)
    analytic = flat_grad(gw, gb)
    flat0 = net.get_flat().copy()

    def f(x):
        net.set_flat(x)
        return pg_objective(net, s, a, adv, 0.3)

    numeric = central_difference(f, flat0)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4


def test_bandit_converges_to_rewarding_arm():
    wins = [bandit_run(seed) > 0.95 for seed in range(20)]
    assert np.mean(wins) >= 0.95


def test_pg_update_from_transition_lists():
    rng = np.random.default_rng(0)
    ag = PgAgent.create(2, 1, (4,), rng)
    traj = [TransitionTuple(rng.normal(size=2), rng.normal(size=1), rng.normal(size=2), 1.0, False, 0.0) for _ in range(5)]
    rep = pg_update(ag, [traj], 0.9)
    assert np.isfinite(rep["baseline_loss"])
    with pytest.raises(ValueError):
        pg_update(ag, [], 0.9)


# -- replay buffer ---------------------------------------------------------------


def _push(buf, beta, r=0.0):
    buf.push(np.full(buf.s.shape[1], r), np.zeros(buf.a.shape[1]), r, np.zeros(buf.s.shape[1]), False, beta)


def test_ring_evicts_oldest():
    buf = ReplayBuffer(3, 1, 1)
    for k in range(5):
        _push(buf, 0.5, float(k))
    assert len(buf) == 3
    assert sorted(buf.all().r) == [2.0, 3.0, 4.0]


def test_full_sample_is_permutation():
    buf = ReplayBuffer(10, 1, 1)
    for k in range(10):
        _push(buf, 0.0, float(k))
    b = buf.sample(10, np.random.default_rng(0))
    assert sorted(b.r) == list(map(float, range(10)))
    with pytest.raises(InsufficientSamples, match="insufficient"):
        buf.sample(11, np.random.default_rng(0))


def test_sampling_frequencies_are_uniform():
    buf = ReplayBuffer(100, 1, 1)
    for k in range(100):
        _push(buf, 0.0, float(k))
    rng = np.random.default_rng(0)
    counts = np.zeros(100)
    for _ in range(10_000):
        counts[int(buf.sample(1, rng).r[0])] += 1
    _, p = stats.chisquare(counts)
    assert p > 0.001
    sigma = np.sqrt(10_000 * 0.01 * 0.99)
    assert np.all(np.abs(counts - 100) < 3 * sigma + 1)


def test_clean_examples():
    buf = ReplayBuffer(10, 1, 1)
    for b in (0.1, 0.3, 0.5):
        _push(buf, b)
    assert buf.clean(0.0, 1.0) == 0
    assert buf.clean(0.25, 0.6) == 1
    mixed = ReplayBuffer(10, 1, 1)
    for b in (0.2, 1.0, 0.7, 1.0):
        _push(mixed, b)
    mixed.clean(1.0, 1.0)
    assert list(mixed.all().beta) == [1.0, 1.0]


def test_clean_keeps_arrival_order():
    buf = ReplayBuffer(4, 1, 1)
    for k, b in enumerate([0.1, 0.9, 0.2, 0.8, 0.3, 0.7]):
        _push(buf, b, float(k))
    buf.clean(0.5, 1.0)
    assert list(buf.all().r) == [3.0, 5.0]
    _push(buf, 0.6, 6.0)
    assert list(buf.all().r) == [3.0, 5.0, 6.0]


def test_push_rejects_bad_beta_and_reward():
    buf = ReplayBuffer(4, 1, 1)
    with pytest.raises(ValueError):
        _push(buf, 1.5)
    with pytest.raises(ValueError):
        buf.push(np.zeros(1), np.zeros(1), np.nan, np.zeros(1), False, 0.5)


def test_clean_invariant_under_fuzzing():
    assert fuzz_clean(20_000, 0) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
def test_clean_property(betas, x, y):
    lo, hi = min(x, y), max(x, y)
    buf = ReplayBuffer(16, 1, 1)
    for b in betas:
        _push(buf, b)
    held = buf.all().beta.copy()
    removed = buf.clean(lo, hi)
    assert removed == int(np.sum((held < lo) | (held > hi)))
    assert np.all((buf.all().beta >= lo) & (buf.all().beta <= hi))
