"""PPO learner: diagonal-Gaussian policy, value function, clipped+KL loss.

The policy network outputs (mean, log_std) for every action dimension; the
value network outputs a scalar.  The loss combines the clipped surrogate
objective, the ratio term with an adaptive KL penalty, the clamped squared
value-function error, and an optional entropy bonus:

    L = -( L_clip + (ratio*A - beta*KL) - c_vf*L_vf + c_s*S )

averaged over a minibatch and minimized.  Gradients are analytic and flow
through both networks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .experience import ContractError, TrainBatch, Trajectory
from .nn import Adam, GradientError, NeuralNetwork, apply_gradients

logger = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

BATCH_COLUMNS = ("advantages", "value_targets", "action_logp", "dist_mean",
                 "dist_log_std")


@dataclass
class PPOConfig:
    gamma: float = 0.95
    lam: float = 0.1
    clip_eps: float = 0.3
    kl_coeff_init: float = 0.2
    kl_target: float = 0.01
    vf_loss_coeff: float = 1.0
    entropy_coeff: float = 0.0
    vf_clip_param: float = 10000.0
    learning_rate: float = 0.0003
    train_batch_size: int = 512
    minibatch_size: int = 64
    sgd_iters: int = 6
    policy_hidden: tuple = (64, 64)
    vf_hidden: tuple = (64, 64)

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        if self.sgd_iters < 1:
            raise ValueError("sgd_iters must be >= 1")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")

    @classmethod
    def from_json(cls, data: dict) -> "PPOConfig":
        kwargs = dict(data)
        for key in ("policy_hidden", "vf_hidden"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


class GaussianDist:
    """Diagonal Gaussian over actions; log_std is clamped before use."""

    def __init__(self, mean, log_std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.log_std = np.clip(np.asarray(log_std, dtype=np.float64),
                               LOG_STD_MIN, LOG_STD_MAX)
        if self.mean.shape != self.log_std.shape:
            raise ContractError("mean and log_std shapes differ")

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def sample(self, rng: np.random.Generator):
        """Draw u = mean + std*z and return (u, logp(u))."""
        z = rng.standard_normal(self.mean.shape)
        u = self.mean + self.std * z
        return u, self.logp(u)

    def logp(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        zscore = (u - self.mean) / self.std
        per_dim = -0.5 * zscore ** 2 - self.log_std - 0.5 * LOG_2PI
        return per_dim.sum(axis=-1)

    def kl(self, other: "GaussianDist") -> np.ndarray:
        """KL(self || other), summed over action dimensions."""
        var, ovar = self.std ** 2, other.std ** 2
        per_dim = (other.log_std - self.log_std
                   + (var + (self.mean - other.mean) ** 2) / (2.0 * ovar)
                   - 0.5)
        return per_dim.sum(axis=-1)

    def entropy(self) -> np.ndarray:
        per_dim = self.log_std + 0.5 * (1.0 + LOG_2PI)
        return per_dim.sum(axis=-1)


def sample_action(dist: GaussianDist, rng: np.random.Generator):
    return dist.sample(rng)


def mean_action(dist: GaussianDist) -> np.ndarray:
    """Deterministic action used for validation episodes."""
    return dist.mean


def clip_objective(ratio, advantage, clip_eps: float):
    """min(clip(ratio, 1-eps, 1+eps)*A, ratio*A), elementwise."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage
    return np.minimum(clipped, ratio * advantage)


def kl_penalty_term(dist_old: GaussianDist, dist_new: GaussianDist, ratio,
                    advantage, kl_coeff: float):
    """ratio*A - beta*KL(old || new), elementwise."""
    return (np.asarray(ratio) * np.asarray(advantage)
            - kl_coeff * dist_old.kl(dist_new))


def vf_loss(vf_pred, value_target, vf_clip_param: float):
    """Squared value error clamped to [0, vf_clip_param], elementwise."""
    err = np.asarray(vf_pred, dtype=np.float64) - np.asarray(value_target)
    return np.clip(err ** 2, 0.0, vf_clip_param)


def update_kl_coefficient(kl_coeff: float, mean_kl: float, kl_target: float) -> float:
    """Adapt the KL penalty: grow when KL overshoots, shrink when it stalls."""
    if mean_kl > 2.0 * kl_target:
        return kl_coeff * 1.5
    if mean_kl < 0.5 * kl_target:
        return kl_coeff / 1.5
    return kl_coeff


def standardize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Shift/scale to zero mean and unit std (no-op scale for constant input)."""
    centered = advantages - advantages.mean()
    std = centered.std()
    if std > 1e-12:
        centered /= std
    return centered


class PPOLearner:
    """Owns the policy and value networks plus their optimizer state."""

    def __init__(self, config: PPOConfig, obs_dims: int, action_dims: int,
                 rng: np.random.Generator):
        self.config = config
        self.action_dims = action_dims
        self.policy = NeuralNetwork.dense(
            [obs_dims, *config.policy_hidden, 2 * action_dims], "tanh", rng=rng)
        self.vf = NeuralNetwork.dense(
            [obs_dims, *config.vf_hidden, 1], "tanh", rng=rng)
        self.policy_opt = Adam(config.learning_rate)
        self.vf_opt = Adam(config.learning_rate)
        self.kl_coeff = config.kl_coeff_init

    # -- inference ---------------------------------------------------------

    def policy_forward(self, obs) -> GaussianDist:
        out = self.policy.forward(obs)
        d = self.action_dims
        return GaussianDist(out[..., :d], out[..., d:])

    def value(self, obs) -> np.ndarray:
        return self.vf.forward(obs)[..., 0]

    def postprocess_rollout(self, traj: Trajectory):
        """Attach vf_pred, dist params, and recomputed logp to every step."""
        if len(traj) == 0:
            return traj
        obs = np.stack([e.obs for e in traj.experiences])
        actions = np.stack([e.action for e in traj.experiences])
        dist = self.policy_forward(obs)
        vf_preds = self.value(obs)
        logps = dist.logp(actions)
        for i, exp in enumerate(traj.experiences):
            exp.aux["vf_pred"] = float(vf_preds[i])
            exp.aux["action_logp"] = float(logps[i])
            exp.aux["dist_mean"] = dist.mean[i].copy()
            exp.aux["dist_log_std"] = dist.log_std[i].copy()
        traj.bootstrap_value = 0.0 if traj.terminal else float(
            self.value(traj.experiences[-1].next_obs))
        return traj

    # -- loss --------------------------------------------------------------

    def total_loss(self, cols: dict, with_grads: bool = True):
        """Minibatch loss, stats, and (optionally) analytic gradients.

        ``cols`` holds obs, actions, advantages, value_targets, action_logp,
        dist_mean, dist_log_std as arrays of equal leading length.
        """
        cfg = self.config
        obs = cols["obs"]
        actions = cols["actions"]
        adv = cols["advantages"]
        n = len(adv)
        d = self.action_dims

        pol_out, pol_cache = self.policy.forward_cached(obs)
        new_mean = pol_out[:, :d]
        raw_log_std = pol_out[:, d:]
        new_dist = GaussianDist(new_mean, raw_log_std)
        old_dist = GaussianDist(cols["dist_mean"], cols["dist_log_std"])

        logp_new = new_dist.logp(actions)
        ratio = np.exp(logp_new - cols["action_logp"])
        kl = old_dist.kl(new_dist)
        entropy = new_dist.entropy()

        surrogate = clip_objective(ratio, adv, cfg.clip_eps)
        kl_term = ratio * adv - self.kl_coeff * kl

        vf_out, vf_cache = self.vf.forward_cached(obs)
        vf_pred = vf_out[:, 0]
        vf_err = vf_pred - cols["value_targets"]
        vf_sq = vf_err ** 2
        vf_clipped = np.clip(vf_sq, 0.0, cfg.vf_clip_param)

        loss = float(np.mean(
            -surrogate - kl_term
            + cfg.vf_loss_coeff * vf_clipped
            - cfg.entropy_coeff * entropy))
        stats = {
            "loss": loss,
            "mean_kl": float(kl.mean()),
            "mean_entropy": float(entropy.mean()),
            "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
            "vf_loss": float(vf_clipped.mean()),
        }
        if not with_grads:
            return loss, stats, None, None

        # d(loss)/d(ratio): the clip term follows whichever branch of the min
        # is active; the KL term always contributes -A.
        clipped_active = (np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
                          <= ratio * adv)
        in_band = (ratio > 1.0 - cfg.clip_eps) & (ratio < 1.0 + cfg.clip_eps)
        dsurr_dratio = np.where(clipped_active, adv * in_band, adv)
        g_logp = (-dsurr_dratio - adv) * ratio / n

        std = new_dist.std
        zscore = (actions - new_mean) / std
        dlogp_dmean = zscore / std
        dlogp_dlogstd = zscore ** 2 - 1.0

        old_var = old_dist.std ** 2
        mean_gap = new_mean - old_dist.mean
        dkl_dmean = mean_gap / std ** 2
        dkl_dlogstd = 1.0 - (old_var + mean_gap ** 2) / std ** 2

        g_mean = (g_logp[:, None] * dlogp_dmean
                  + (self.kl_coeff / n) * dkl_dmean)
        g_logstd = (g_logp[:, None] * dlogp_dlogstd
                    + (self.kl_coeff / n) * dkl_dlogstd
                    - cfg.entropy_coeff / n)
        # log_std clamp: gradient does not flow outside the clamp band.
        g_logstd *= (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        policy_grads, _ = self.policy.backward(
            pol_cache, np.concatenate([g_mean, g_logstd], axis=1))

        g_vf = np.zeros((n, 1))
        g_vf[:, 0] = (cfg.vf_loss_coeff / n) * 2.0 * vf_err * (vf_sq < cfg.vf_clip_param)
        vf_grads, _ = self.vf.backward(vf_cache, g_vf)
        return loss, stats, policy_grads, vf_grads

    # -- training ----------------------------------------------------------

    def train_on_batch(self, batch: TrainBatch, rng: np.random.Generator) -> dict:
        """Run sgd_iters passes of shuffled minibatch updates over the batch.

        Advantages are standardized across the whole batch first.  The KL
        coefficient adapts once, from the final pass's mean KL.  A non-finite
        loss or gradient aborts the update and restores the previous weights.
        """
        cfg = self.config
        for key in BATCH_COLUMNS:
            if key not in batch.extras:
                raise ContractError(f"PPO train batch is missing column {key!r}")
        n = len(batch)
        if n == 0:
            raise ContractError("cannot train on an empty batch")

        cols = {
            "obs": batch.obs,
            "actions": batch.actions,
            "advantages": standardize_advantages(batch.extras["advantages"]),
            "value_targets": batch.extras["value_targets"],
            "action_logp": batch.extras["action_logp"],
            "dist_mean": batch.extras["dist_mean"],
            "dist_log_std": batch.extras["dist_log_std"],
        }

        snapshot = (self.policy.copy(), self.vf.copy(),
                    self.policy_opt.snapshot_state(), self.vf_opt.snapshot_state())

        steps = 0
        final_kl_sum = final_entropy_sum = final_clip_sum = final_loss_sum = 0.0
        for it in range(cfg.sgd_iters):
            order = rng.permutation(n)
            last_pass = it == cfg.sgd_iters - 1
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start:start + cfg.minibatch_size]
                mb = {k: v[idx] for k, v in cols.items()}
                loss, stats, pol_grads, vf_grads = self.total_loss(mb)
                if not math.isfinite(loss):
                    self._restore(snapshot)
                    logger.warning("non-finite PPO loss; update aborted")
                    return {"aborted": True, "num_gradient_steps": steps}
                try:
                    apply_gradients(self.policy, self.policy_opt, pol_grads)
                    apply_gradients(self.vf, self.vf_opt, vf_grads)
                except GradientError:
                    self._restore(snapshot)
                    logger.warning("non-finite PPO gradient; update aborted")
                    return {"aborted": True, "num_gradient_steps": steps}
                steps += 1
                if last_pass:
                    m = len(idx)
                    final_kl_sum += stats["mean_kl"] * m
                    final_entropy_sum += stats["mean_entropy"] * m
                    final_clip_sum += stats["clip_fraction"] * m
                    final_loss_sum += stats["loss"] * m

        mean_kl = final_kl_sum / n
        self.kl_coeff = update_kl_coefficient(self.kl_coeff, mean_kl, cfg.kl_target)
        return {
            "aborted": False,
            "num_gradient_steps": steps,
            "loss": final_loss_sum / n,
            "mean_kl": mean_kl,
            "mean_entropy": final_entropy_sum / n,
            "clip_fraction": final_clip_sum / n,
            "kl_coeff": self.kl_coeff,
        }

    def _restore(self, snapshot):
        policy, vf, pol_state, vf_state = snapshot
        self.policy = policy
        self.vf = vf
        self.policy_opt.restore_state(pol_state)
        self.vf_opt.restore_state(vf_state)
