"""DDPG learner: deterministic actor, action-value critic, replay buffer.

The actor maps observations to raw actions; exploration adds Gaussian noise
to its output.  The critic scores (observation, action) pairs and trains on
the Huber TD error against slowly-tracking target copies of both networks.
Training happens once per data-collection cycle with a number of minibatch
steps proportional to the current buffer fill.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .experience import ContractError, TrainBatch
from .nn import Adam, GradientError, NeuralNetwork, apply_gradients, polyak_update

logger = logging.getLogger(__name__)


@dataclass
class DDPGConfig:
    gamma: float = 0.99
    rho: float = 0.001
    actor_lr: float = 0.001
    critic_lr: float = 0.001
    huber_delta: float = 1.0
    buffer_capacity: int = 10000
    batch_size: int = 64
    learning_starts: int = 2400
    replay_fraction: float = 2.5
    noise_std: float = 0.3
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @classmethod
    def from_json(cls, data: dict) -> "DDPGConfig":
        kwargs = dict(data)
        for key in ("actor_hidden", "critic_hidden"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dims: int, action_dims: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dims))
        self._actions = np.zeros((capacity, action_dims))
        self._rewards = np.zeros(capacity)
        self._next_obs = np.zeros((capacity, obs_dims))
        self._dones = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs, action, reward: float, next_obs, done: bool):
        i = self._next
        self._obs[i] = obs
        self._actions[i] = action
        self._rewards[i] = reward
        self._next_obs[i] = next_obs
        self._dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def add_batch(self, batch: TrainBatch):
        for i in range(len(batch)):
            self.add(batch.obs[i], batch.actions[i], batch.rewards[i],
                     batch.next_obs[i], bool(batch.dones[i]))

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        """Uniform with replacement; raises if the buffer is empty."""
        if self._size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": self._obs[idx].copy(),
            "actions": self._actions[idx].copy(),
            "rewards": self._rewards[idx].copy(),
            "next_obs": self._next_obs[idx].copy(),
            "dones": self._dones[idx].copy(),
        }


def huber(err: np.ndarray, delta: float) -> np.ndarray:
    """Quadratic within |err| <= delta, linear beyond, elementwise."""
    abs_err = np.abs(err)
    return np.where(abs_err <= delta,
                    0.5 * err ** 2,
                    delta * (abs_err - 0.5 * delta))


def huber_grad(err: np.ndarray, delta: float) -> np.ndarray:
    return np.where(np.abs(err) <= delta, err, delta * np.sign(err))


def num_train_steps(buffer_size: int, config: DDPGConfig) -> int:
    """Minibatch steps for one cycle: none until the warm-up fill is reached,
    then ceil(replay_fraction * buffer_size / batch_size)."""
    if buffer_size < config.learning_starts:
        return 0
    return math.ceil(config.replay_fraction * buffer_size / config.batch_size)


class DDPGLearner:
    """Owns actor/critic networks, their targets, optimizers, and the buffer."""

    def __init__(self, config: DDPGConfig, obs_dims: int, action_dims: int,
                 rng: np.random.Generator):
        self.config = config
        self.obs_dims = obs_dims
        self.action_dims = action_dims
        self.actor = NeuralNetwork.dense(
            [obs_dims, *config.actor_hidden, action_dims], "relu", rng=rng)
        self.critic = NeuralNetwork.dense(
            [obs_dims + action_dims, *config.critic_hidden, 1], "relu", rng=rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(config.actor_lr)
        self.critic_opt = Adam(config.critic_lr)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_dims, action_dims)

    # -- inference ---------------------------------------------------------

    def greedy_action(self, obs) -> np.ndarray:
        return self.actor.forward(obs)

    def explore_action(self, obs, rng: np.random.Generator) -> np.ndarray:
        u = self.actor.forward(obs)
        return u + self.config.noise_std * rng.standard_normal(u.shape)

    def q_value(self, obs, actions, net: NeuralNetwork = None) -> np.ndarray:
        net = net if net is not None else self.critic
        joint = np.concatenate([np.atleast_2d(obs), np.atleast_2d(actions)], axis=1)
        return net.forward(joint)[:, 0]

    def q_target(self, rewards, next_obs, dones) -> np.ndarray:
        """Bootstrapped target r + gamma * (1 - done) * Q'(s', mu'(s'))."""
        next_actions = self.target_actor.forward(next_obs)
        next_q = self.q_value(next_obs, next_actions, net=self.target_critic)
        return rewards + self.config.gamma * (1.0 - dones) * next_q

    # -- losses ------------------------------------------------------------

    def critic_loss(self, cols: dict, with_grads: bool = True):
        """Mean Huber TD error; gradients are for the online critic only."""
        targets = self.q_target(cols["rewards"], cols["next_obs"], cols["dones"])
        joint = np.concatenate([cols["obs"], cols["actions"]], axis=1)
        q_out, cache = self.critic.forward_cached(joint)
        err = q_out[:, 0] - targets
        loss = float(huber(err, self.config.huber_delta).mean())
        if not with_grads:
            return loss, None
        n = len(err)
        g = np.zeros((n, 1))
        g[:, 0] = huber_grad(err, self.config.huber_delta) / n
        grads, _ = self.critic.backward(cache, g)
        return loss, grads

    def actor_objective_grads(self, obs):
        """Gradient of mean Q(s, mu(s)) with respect to actor parameters.

        The chain runs through the critic's action inputs; the critic's own
        parameters are left untouched.
        """
        n = len(obs)
        actions, actor_cache = self.actor.forward_cached(obs)
        joint = np.concatenate([obs, actions], axis=1)
        q_out, critic_cache = self.critic.forward_cached(joint)
        g = np.full((n, 1), 1.0 / n)
        _, input_grad = self.critic.backward(critic_cache, g)
        action_grad = input_grad[:, self.obs_dims:]
        grads, _ = self.actor.backward(actor_cache, action_grad)
        return float(q_out[:, 0].mean()), grads

    # -- training ----------------------------------------------------------

    def train_step(self, cols: dict) -> dict:
        """One minibatch update: critic descent, actor ascent, target tracking."""
        loss, critic_grads = self.critic_loss(cols)
        if not math.isfinite(loss):
            logger.warning("non-finite critic loss; step skipped")
            return {"skipped": True}
        try:
            apply_gradients(self.critic, self.critic_opt, critic_grads)
        except GradientError:
            logger.warning("non-finite critic gradient; step skipped")
            return {"skipped": True}

        mean_q, actor_grads = self.actor_objective_grads(cols["obs"])
        if math.isfinite(mean_q):
            try:
                apply_gradients(self.actor, self.actor_opt, actor_grads,
                                direction="maximize")
            except GradientError:
                logger.warning("non-finite actor gradient; actor step skipped")
        else:
            logger.warning("non-finite actor objective; actor step skipped")

        polyak_update(self.target_actor, self.actor, self.config.rho)
        polyak_update(self.target_critic, self.critic, self.config.rho)
        return {"skipped": False, "critic_loss": loss, "mean_q": mean_q}

    def cycle_train(self, rng: np.random.Generator) -> dict:
        """Run the per-cycle training schedule against the replay buffer."""
        steps = num_train_steps(len(self.buffer), self.config)
        losses = []
        for _ in range(steps):
            cols = self.buffer.sample(self.config.batch_size, rng)
            stats = self.train_step(cols)
            if not stats.get("skipped"):
                losses.append(stats["critic_loss"])
        return {
            "num_train_steps": steps,
            "critic_loss": float(np.mean(losses)) if losses else float("nan"),
            "buffer_size": len(self.buffer),
        }
