"""Tests for the deterministic actor-critic learner and its replay buffer."""

import math

import numpy as np
import pytest

from cyclerl.ddpg import (
    DDPGConfig,
    DDPGLearner,
    ReplayBuffer,
    huber,
    huber_grad,
    num_train_steps,
)
from cyclerl.experience import ContractError, TrainBatch
from cyclerl.nn import Adam, apply_gradients


def small_config(**overrides):
    base = dict(actor_hidden=(8,), critic_hidden=(8,), buffer_capacity=200,
                learning_starts=100, batch_size=16, replay_fraction=0.5)
    base.update(overrides)
    return DDPGConfig(**base)


def fill_buffer(learner, rng, n):
    for _ in range(n):
        learner.buffer.add(rng.uniform(-1, 1, 3), rng.normal(size=1),
                           float(rng.uniform(-16, 0)), rng.uniform(-1, 1, 3),
                           False)


class TestDDPGConfig:
    def test_defaults(self):
        cfg = DDPGConfig()
        assert cfg.gamma == 0.99
        assert cfg.rho == 0.001
        assert cfg.actor_lr == 0.001
        assert cfg.critic_lr == 0.001
        assert cfg.huber_delta == 1.0
        assert cfg.buffer_capacity == 10000
        assert cfg.batch_size == 64
        assert cfg.learning_starts == 2400
        assert cfg.replay_fraction == 2.5
        assert cfg.noise_std == 0.3
        assert cfg.actor_hidden == (64, 64)
        assert cfg.critic_hidden == (64, 64)

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            DDPGConfig(buffer_capacity=0)
        with pytest.raises(ValueError):
            DDPGConfig(batch_size=0)
        with pytest.raises(ValueError):
            DDPGConfig(rho=0.0)
        with pytest.raises(ValueError):
            DDPGConfig(rho=1.5)
        with pytest.raises(ValueError):
            DDPGConfig(noise_std=-0.1)

    def test_from_json_converts_hidden_lists(self):
        cfg = DDPGConfig.from_json({"actor_hidden": [32], "gamma": 0.9})
        assert cfg.actor_hidden == (32,)
        assert cfg.gamma == 0.9


class TestReplayBuffer:
    def make(self, capacity=3):
        return ReplayBuffer(capacity, obs_dims=2, action_dims=1)

    def add_tagged(self, buf, reward):
        buf.add(np.zeros(2), np.zeros(1), reward, np.zeros(2), False)

    def test_size_grows_then_saturates(self):
        buf = self.make(capacity=3)
        for r in range(5):
            self.add_tagged(buf, float(r))
            assert len(buf) == min(r + 1, 3)

    def test_oldest_entries_evicted_first(self):
        buf = self.make(capacity=3)
        for r in range(5):
            self.add_tagged(buf, float(r))
        seen = set(buf.sample(500, np.random.default_rng(0))["rewards"])
        assert seen == {2.0, 3.0, 4.0}

    def test_wraparound_at_production_capacity(self):
        buf = ReplayBuffer(10000, obs_dims=1, action_dims=1)
        for r in range(10600):
            buf.add([0.0], [0.0], float(r), [0.0], False)
        assert len(buf) == 10000
        sampled = buf.sample(5000, np.random.default_rng(1))["rewards"]
        assert sampled.min() >= 600.0
        assert sampled.max() <= 10599.0

    def test_sample_shapes_and_keys(self):
        buf = self.make()
        self.add_tagged(buf, 1.0)
        cols = buf.sample(8, np.random.default_rng(2))
        assert set(cols) == {"obs", "actions", "rewards", "next_obs", "dones"}
        assert cols["obs"].shape == (8, 2)
        assert cols["actions"].shape == (8, 1)
        assert cols["rewards"].shape == (8,)
        assert cols["dones"].shape == (8,)

    def test_sample_empty_rejected(self):
        with pytest.raises(ContractError):
            self.make().sample(4, np.random.default_rng(3))

    def test_sample_reproducible(self):
        buf = self.make()
        for r in range(3):
            self.add_tagged(buf, float(r))
        a = buf.sample(16, np.random.default_rng(4))
        b = buf.sample(16, np.random.default_rng(4))
        assert np.array_equal(a["rewards"], b["rewards"])

    def test_sample_returns_copies(self):
        buf = self.make()
        self.add_tagged(buf, 5.0)
        cols = buf.sample(4, np.random.default_rng(5))
        cols["rewards"][:] = -1.0
        again = buf.sample(4, np.random.default_rng(5))
        assert np.all(again["rewards"] == 5.0)

    def test_add_batch_matches_individual_adds(self):
        batch = TrainBatch(
            obs=np.arange(10).reshape(5, 2).astype(float),
            actions=np.arange(5).reshape(5, 1).astype(float),
            next_obs=np.zeros((5, 2)),
            rewards=np.arange(5).astype(float),
            dones=np.array([False, False, True, False, False]),
        )
        buf_a, buf_b = self.make(capacity=8), self.make(capacity=8)
        buf_a.add_batch(batch)
        for i in range(5):
            buf_b.add(batch.obs[i], batch.actions[i], batch.rewards[i],
                      batch.next_obs[i], bool(batch.dones[i]))
        a = buf_a.sample(32, np.random.default_rng(6))
        b = buf_b.sample(32, np.random.default_rng(6))
        for key in a:
            assert np.array_equal(a[key], b[key])


class TestHuber:
    def test_quadratic_region(self):
        assert math.isclose(float(huber(np.array(0.5), 1.0)), 0.125)

    def test_boundary_value(self):
        assert math.isclose(float(huber(np.array(1.0), 1.0)), 0.5)

    def test_linear_region(self):
        assert math.isclose(float(huber(np.array(2.0), 1.0)), 1.5)
        assert math.isclose(float(huber(np.array(-2.0), 1.0)), 1.5)

    def test_other_delta(self):
        assert math.isclose(float(huber(np.array(3.0), 2.0)), 4.0)

    def test_continuous_at_the_kink(self):
        lo = float(huber(np.array(1.0 - 1e-9), 1.0))
        hi = float(huber(np.array(1.0 + 1e-9), 1.0))
        assert abs(hi - lo) < 1e-8

    def test_gradient_values(self):
        err = np.array([0.5, 2.0, -2.0, 1.0])
        assert np.allclose(huber_grad(err, 1.0), [0.5, 1.0, -1.0, 1.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        err = rng.uniform(-3.0, 3.0, 50)
        err = err[np.abs(np.abs(err) - 1.0) > 1e-3]  # stay off the kink
        h = 1e-6
        fd = (huber(err + h, 1.0) - huber(err - h, 1.0)) / (2 * h)
        assert np.allclose(huber_grad(err, 1.0), fd, atol=1e-8)


class TestNumTrainSteps:
    def test_zero_before_warmup(self):
        cfg = DDPGConfig()
        assert num_train_steps(0, cfg) == 0
        assert num_train_steps(600, cfg) == 0
        assert num_train_steps(2399, cfg) == 0

    def test_at_warmup_threshold(self):
        # ceil(2.5 * 2400 / 64) = ceil(93.75)
        assert num_train_steps(2400, DDPGConfig()) == 94

    def test_at_full_buffer(self):
        # ceil(2.5 * 10000 / 64) = ceil(390.625)
        assert num_train_steps(10000, DDPGConfig()) == 391

    def test_scales_with_fraction(self):
        cfg = DDPGConfig(replay_fraction=0.25, learning_starts=0)
        assert num_train_steps(64, cfg) == 1
        assert num_train_steps(256, cfg) == 1
        assert num_train_steps(2560, cfg) == 10


class TestQTarget:
    def make_linear_learner(self):
        cfg = DDPGConfig(actor_hidden=(), critic_hidden=())
        learner = DDPGLearner(cfg, 3, 1, np.random.default_rng(8))
        learner.target_actor.layers[0].weights[:] = [[0.1, 0.2, 0.3]]
        learner.target_actor.layers[0].biases[:] = [0.05]
        learner.target_critic.layers[0].weights[:] = [[1.0, 2.0, 3.0, 4.0]]
        learner.target_critic.layers[0].biases[:] = [0.5]
        return learner

    def test_hand_computed_bootstrap(self):
        learner = self.make_linear_learner()
        # mu'([1,1,1]) = 0.65, Q'([1,1,1], 0.65) = 6 + 2.6 + 0.5 = 9.1
        target = learner.q_target(np.array([2.0]), np.ones((1, 3)),
                                  np.array([0.0]))
        assert math.isclose(float(target[0]), 2.0 + 0.99 * 9.1, abs_tol=1e-12)

    def test_terminal_transition_gets_raw_reward(self):
        learner = self.make_linear_learner()
        target = learner.q_target(np.array([-3.0]), np.ones((1, 3)),
                                  np.array([1.0]))
        assert float(target[0]) == -3.0

    def test_mixed_done_flags(self):
        learner = self.make_linear_learner()
        targets = learner.q_target(np.array([2.0, -3.0]), np.ones((2, 3)),
                                   np.array([0.0, 1.0]))
        assert math.isclose(float(targets[0]), 2.0 + 0.99 * 9.1, abs_tol=1e-12)
        assert float(targets[1]) == -3.0

    def test_uses_target_networks_not_online(self):
        learner = self.make_linear_learner()
        before = learner.q_target(np.array([0.0]), np.ones((1, 3)),
                                  np.array([0.0]))
        learner.actor.layers[0].weights[:] = 99.0
        learner.critic.layers[0].weights[:] = 99.0
        after = learner.q_target(np.array([0.0]), np.ones((1, 3)),
                                 np.array([0.0]))
        assert float(before[0]) == float(after[0])


class TestCriticLoss:
    def test_hand_computed_single_transition(self):
        cfg = DDPGConfig(actor_hidden=(), critic_hidden=())
        learner = DDPGLearner(cfg, 3, 1, np.random.default_rng(9))
        learner.target_actor.layers[0].weights[:] = 0.0
        learner.target_actor.layers[0].biases[:] = 0.0
        learner.target_critic.layers[0].weights[:] = 0.0
        learner.target_critic.layers[0].biases[:] = 0.0
        learner.critic.layers[0].weights[:] = [[1.0, 0.0, 0.0, 1.0]]
        learner.critic.layers[0].biases[:] = [0.0]
        cols = {
            "obs": np.array([[0.5, 0.0, 0.0]]),
            "actions": np.array([[0.25]]),
            "rewards": np.array([0.15]),
            "next_obs": np.zeros((1, 3)),
            "dones": np.array([0.0]),
        }
        # q = 0.75, target = 0.15, err = 0.6 -> huber = 0.18
        loss, _ = learner.critic_loss(cols, with_grads=False)
        assert math.isclose(loss, 0.18, abs_tol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        cols = {
            "obs": rng.uniform(-1, 1, (8, 3)),
            "actions": rng.normal(size=(8, 1)),
            "rewards": rng.uniform(-16, 0, 8),
            "next_obs": rng.uniform(-1, 1, (8, 3)),
            "dones": np.zeros(8),
        }
        _, grads = learner.critic_loss(cols)
        h = 1e-5
        worst = 0.0
        for layer, (dw, db) in zip(learner.critic.layers, grads):
            for arr, grad in ((layer.weights, dw), (layer.biases, db)):
                flat, gflat = arr.ravel(), np.asarray(grad).ravel()
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    up, _ = learner.critic_loss(cols, with_grads=False)
                    flat[j] = orig - h
                    down, _ = learner.critic_loss(cols, with_grads=False)
                    flat[j] = orig
                    worst = max(worst, abs((up - down) / (2 * h) - gflat[j]))
        assert worst < 1e-4


class TestActorObjective:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        obs = rng.uniform(-1, 1, (8, 3))
        _, grads = learner.actor_objective_grads(obs)

        def objective():
            actions = learner.actor.forward(obs)
            return float(learner.q_value(obs, actions).mean())

        h = 1e-5
        worst = 0.0
        for layer, (dw, db) in zip(learner.actor.layers, grads):
            for arr, grad in ((layer.weights, dw), (layer.biases, db)):
                flat, gflat = arr.ravel(), np.asarray(grad).ravel()
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    up = objective()
                    flat[j] = orig - h
                    down = objective()
                    flat[j] = orig
                    worst = max(worst, abs((up - down) / (2 * h) - gflat[j]))
        assert worst < 1e-4

    def test_ascent_improves_mean_q(self):
        rng = np.random.default_rng(12)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        obs = rng.uniform(-1, 1, (32, 3))
        start, _ = learner.actor_objective_grads(obs)
        opt = Adam(0.01)
        for _ in range(50):
            _, grads = learner.actor_objective_grads(obs)
            apply_gradients(learner.actor, opt, grads, direction="maximize")
        end, _ = learner.actor_objective_grads(obs)
        assert end > start


class TestTrainStep:
    def make_cols(self, rng, n=16):
        return {
            "obs": rng.uniform(-1, 1, (n, 3)),
            "actions": rng.normal(size=(n, 1)),
            "rewards": rng.uniform(-16, 0, n),
            "next_obs": rng.uniform(-1, 1, (n, 3)),
            "dones": np.zeros(n),
        }

    def test_returns_finite_stats(self):
        rng = np.random.default_rng(13)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        stats = learner.train_step(self.make_cols(rng))
        assert not stats["skipped"]
        assert math.isfinite(stats["critic_loss"])
        assert math.isfinite(stats["mean_q"])

    def test_target_networks_track_online(self):
        rng = np.random.default_rng(14)
        learner = DDPGLearner(small_config(rho=0.01), 3, 1, rng)
        old_target = [(l.weights.copy(), l.biases.copy())
                      for l in learner.target_critic.layers]
        learner.train_step(self.make_cols(rng))
        for (ow, ob), tl, ol in zip(old_target, learner.target_critic.layers,
                                    learner.critic.layers):
            expected_w = ow * 0.99
            expected_w += 0.01 * ol.weights
            expected_b = ob * 0.99
            expected_b += 0.01 * ol.biases
            assert np.array_equal(tl.weights, expected_w)
            assert np.array_equal(tl.biases, expected_b)

    def test_non_finite_batch_skipped_without_damage(self):
        rng = np.random.default_rng(15)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        cols = self.make_cols(rng)
        cols["rewards"][3] = np.nan
        critic_before = learner.critic.copy()
        target_before = learner.target_critic.copy()
        stats = learner.train_step(cols)
        assert stats["skipped"]
        assert learner.critic == critic_before
        assert learner.target_critic == target_before


class TestCycleTrain:
    def test_no_training_before_warmup(self):
        rng = np.random.default_rng(16)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        fill_buffer(learner, rng, 99)
        result = learner.cycle_train(rng)
        assert result["num_train_steps"] == 0
        assert math.isnan(result["critic_loss"])
        assert result["buffer_size"] == 99

    def test_empty_buffer_is_a_clean_noop(self):
        rng = np.random.default_rng(17)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        result = learner.cycle_train(rng)
        assert result["num_train_steps"] == 0

    def test_schedule_matches_buffer_fill(self):
        rng = np.random.default_rng(18)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        fill_buffer(learner, rng, 150)
        before = learner.critic.copy()
        result = learner.cycle_train(rng)
        # ceil(0.5 * 150 / 16) = 5
        assert result["num_train_steps"] == 5
        assert math.isfinite(result["critic_loss"])
        assert learner.critic != before

    def test_cycle_is_deterministic(self):
        nets = []
        for _ in range(2):
            rng = np.random.default_rng(19)
            learner = DDPGLearner(small_config(), 3, 1, rng)
            fill_buffer(learner, rng, 150)
            learner.cycle_train(rng)
            nets.append(learner)
        assert nets[0].actor == nets[1].actor
        assert nets[0].critic == nets[1].critic
        assert nets[0].target_critic == nets[1].target_critic


class TestActions:
    def test_zero_noise_matches_greedy(self):
        rng = np.random.default_rng(20)
        learner = DDPGLearner(small_config(noise_std=0.0), 3, 1, rng)
        obs = np.array([0.1, -0.5, 0.9])
        assert np.array_equal(learner.explore_action(obs, rng),
                              learner.greedy_action(obs))

    def test_noise_statistics(self):
        rng = np.random.default_rng(21)
        learner = DDPGLearner(small_config(), 3, 1, rng)
        obs = np.array([0.1, -0.5, 0.9])
        base = learner.greedy_action(obs)
        deltas = np.array([learner.explore_action(obs, rng)[0] - base[0]
                           for _ in range(5000)])
        assert abs(deltas.mean()) < 0.02
        assert abs(deltas.std() - 0.3) < 0.02

    def test_exploration_reproducible(self):
        learner = DDPGLearner(small_config(), 3, 1, np.random.default_rng(22))
        obs = np.array([0.1, -0.5, 0.9])
        a = learner.explore_action(obs, np.random.default_rng(23))
        b = learner.explore_action(obs, np.random.default_rng(23))
        assert np.array_equal(a, b)
