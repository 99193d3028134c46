"""Experience records, trajectories, returns/advantages, and train batches.

Everything stored here lives in normalized space: observations in [-1, +1]
and actions as the raw (pre-tanh) network outputs.  Values are immutable by
convention once recorded; the learners only ever read them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import DomainError

# Aux keys PPO needs on every experience before a batch can be assembled.
PPO_AUX_KEYS = ("vf_pred", "action_logp", "dist_mean", "dist_log_std")


class ContractError(ValueError):
    """A batch or trajectory is missing data its consumer requires."""


@dataclass
class Experience:
    """One transition (s, a, s', r, d) plus algorithm-specific aux values."""

    obs: np.ndarray
    action: np.ndarray
    next_obs: np.ndarray
    reward: float
    done: bool
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.action = np.asarray(self.action, dtype=np.float64)
        self.next_obs = np.asarray(self.next_obs, dtype=np.float64)
        self.reward = float(self.reward)
        self.done = bool(self.done)
        for name, arr in (("obs", self.obs), ("action", self.action),
                          ("next_obs", self.next_obs)):
            if not np.isfinite(arr).all():
                raise DomainError(f"non-finite {name} in experience")
        if not np.isfinite(self.reward):
            raise DomainError("non-finite reward in experience")

    def to_wire(self) -> dict:
        aux = {}
        for k, v in self.aux.items():
            aux[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return {
            "obs": self.obs.tolist(),
            "action": self.action.tolist(),
            "next_obs": self.next_obs.tolist(),
            "reward": self.reward,
            "done": self.done,
            "aux": aux,
        }

    @classmethod
    def from_wire(cls, data: dict) -> "Experience":
        try:
            return cls(
                obs=np.asarray(data["obs"], dtype=np.float64),
                action=np.asarray(data["action"], dtype=np.float64),
                next_obs=np.asarray(data["next_obs"], dtype=np.float64),
                reward=data["reward"],
                done=data["done"],
                aux={k: (np.asarray(v, dtype=np.float64) if isinstance(v, list) else v)
                     for k, v in data.get("aux", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"bad experience on the wire: {exc}") from exc


@dataclass
class Trajectory:
    """An ordered episode of experiences.

    ``done`` may be true only on the final step; episodes either hit a
    terminal state or are truncated at the configured horizon.  For
    non-terminal (truncated-but-bootstrappable) episodes the post-processing
    step fills ``bootstrap_value`` with the value estimate of the final
    next-observation; for terminal episodes it stays 0.
    """

    experiences: list
    episode_id: int = 0
    seed: int | None = None
    bootstrap_value: float = 0.0

    def __post_init__(self):
        for i, exp in enumerate(self.experiences):
            if exp.done and i != len(self.experiences) - 1:
                raise ContractError(f"done flag set mid-trajectory at step {i}")

    def __len__(self) -> int:
        return len(self.experiences)

    @property
    def terminal(self) -> bool:
        return bool(self.experiences) and self.experiences[-1].done

    @property
    def rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self.experiences])

    @property
    def undiscounted_return(self) -> float:
        return float(self.rewards.sum())


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """Sum of gamma**t * r_t over the trajectory."""
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must be in (0, 1], got {gamma}")
    if len(traj) == 0:
        raise ContractError("empty trajectory has no return")
    rewards = traj.rewards
    return float(rewards @ np.power(gamma, np.arange(len(rewards))))


def gae_advantages(traj: Trajectory, vf_preds, bootstrap_value: float,
                   gamma: float, lam: float):
    """Lambda-weighted advantage estimates and value targets for one episode.

    delta_t = r_t + gamma*V_{t+1} - V_t with V_T := bootstrap_value, then
    A_t = sum_k (gamma*lam)**k * delta_{t+k} via the usual backward recursion.
    Value targets are A + vf_preds.
    """
    vf_preds = np.asarray(vf_preds, dtype=np.float64)
    rewards = traj.rewards
    if vf_preds.shape != rewards.shape:
        raise ContractError(
            f"vf_preds length {vf_preds.shape} != trajectory length {rewards.shape}"
        )
    values_next = np.append(vf_preds[1:], bootstrap_value)
    deltas = rewards + gamma * values_next - vf_preds
    advantages = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        advantages[t] = acc
    return advantages, advantages + vf_preds


@dataclass
class TrainBatch:
    """Columnar experience data in the layout the learners expect."""

    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("obs", "actions", "next_obs", "dones"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"column {name} length != {n}")
        for name, col in self.extras.items():
            if len(col) != n:
                raise ContractError(f"extra column {name} length != {n}")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def valid_for_training(self) -> bool:
        return len(self) > 0


def assemble_train_batch(trajectories, algorithm: str, *, gamma: float | None = None,
                         lam: float | None = None) -> TrainBatch:
    """Concatenate episodes into one columnar batch.

    For PPO every experience must already carry the post-processing aux
    values (vf_pred, action_logp, dist params); advantages and value targets
    are computed per episode before concatenation.  For DDPG only the plain
    (s, a, s', r, d) columns are produced.
    """
    if algorithm not in ("ppo", "ddpg"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    trajectories = list(trajectories)
    if not trajectories or all(len(t) == 0 for t in trajectories):
        return TrainBatch(
            obs=np.zeros((0, 1)), actions=np.zeros((0, 1)), next_obs=np.zeros((0, 1)),
            rewards=np.zeros(0), dones=np.zeros(0, dtype=bool),
        )

    all_exps = [e for t in trajectories for e in t.experiences]
    base = dict(
        obs=np.stack([e.obs for e in all_exps]),
        actions=np.stack([e.action for e in all_exps]),
        next_obs=np.stack([e.next_obs for e in all_exps]),
        rewards=np.array([e.reward for e in all_exps]),
        dones=np.array([e.done for e in all_exps], dtype=bool),
    )
    if algorithm == "ddpg":
        return TrainBatch(**base)

    if gamma is None or lam is None:
        raise ValueError("PPO batch assembly needs gamma and lam")
    for key in PPO_AUX_KEYS:
        if any(key not in e.aux for t in trajectories for e in t.experiences):
            raise ContractError(f"PPO batch requires aux column {key!r} on every step")

    adv_parts, target_parts = [], []
    for traj in trajectories:
        if len(traj) == 0:
            continue
        vf_preds = np.array([float(e.aux["vf_pred"]) for e in traj.experiences])
        bootstrap = 0.0 if traj.terminal else traj.bootstrap_value
        adv, targets = gae_advantages(traj, vf_preds, bootstrap, gamma, lam)
        adv_parts.append(adv)
        target_parts.append(targets)
    extras = {
        "advantages": np.concatenate(adv_parts),
        "value_targets": np.concatenate(target_parts),
        "vf_preds": np.array([float(e.aux["vf_pred"]) for e in all_exps]),
        "action_logp": np.array([float(e.aux["action_logp"]) for e in all_exps]),
        "dist_mean": np.stack(
            [np.atleast_1d(np.asarray(e.aux["dist_mean"], dtype=np.float64))
             for e in all_exps]),
        "dist_log_std": np.stack(
            [np.atleast_1d(np.asarray(e.aux["dist_log_std"], dtype=np.float64))
             for e in all_exps]),
    }
    return TrainBatch(extras=extras, **base)
