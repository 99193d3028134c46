"""Master process: owns the learner, schedules rollouts, writes results.

Training proceeds in cycles.  Each cycle the master broadcasts the current
acting weights, splits the episode workload over the connected minions,
collects the uploaded experiences (requeueing the share of any minion that
dies mid-cycle), trains on the assembled batch, and appends one row to
training_returns.csv.  Every validation_interval cycles one minion runs a
deterministic validation episode whose return and full trace are written
out as well.

Episode seeds are derived from (master seed, cycle, episode index), and
episodes are sorted by index before training, so results are identical no
matter how many minions share the work or in which order uploads arrive.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import queue
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ddpg import DDPGConfig, DDPGLearner
from .experience import Experience, Trajectory, assemble_train_batch
from .pendulum import PENDULUM_SPACE, DEFAULT_EPISODE_STEPS
from .ppo import PPOConfig, PPOLearner
from .protocol import ProtocolError, WireMessage, split_workload
from .server import Server

logger = logging.getLogger(__name__)

ALGORITHMS = ("ppo", "ddpg")

TRAINING_HEADER = "cycle,num_experiences,mean_return,min_return,max_return"
VALIDATION_HEADER = "cycle,return"
TRACE_HEADER = "time_step,x,y,phi_dot,action,reward"


class MasterError(Exception):
    """Configuration or orchestration failure the master cannot recover from."""


@dataclass
class NetworkConfig:
    host: str = "127.0.0.1"
    port: int = 5555
    min_minions: int = 1
    heartbeat_timeout: float = 15.0
    monitor_period: float = 1.0
    task_deadline: float = 600.0
    handshake_timeout: float = 10.0


@dataclass
class MasterConfig:
    algorithm: str = "ppo"
    seed: int = 0
    total_cycles: int = 100
    episodes_per_cycle: int = 3
    episode_steps: int = DEFAULT_EPISODE_STEPS
    validation_interval: int = 5
    checkpoint_interval: int = 0
    output_dir: str = "results"
    stop_on_validation_return: float = None
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    ddpg: DDPGConfig = field(default_factory=DDPGConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise MasterError(f"algorithm must be one of {ALGORITHMS}, "
                              f"got {self.algorithm!r}")
        if self.total_cycles < 0:
            raise MasterError("total_cycles must be >= 0")
        for name in ("episodes_per_cycle", "episode_steps",
                     "validation_interval"):
            if getattr(self, name) < 1:
                raise MasterError(f"{name} must be >= 1")

    @classmethod
    def from_json(cls, data: dict) -> "MasterConfig":
        if not isinstance(data, dict):
            raise MasterError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise MasterError(f"unknown config keys {sorted(unknown)}")
        kwargs = dict(data)
        try:
            if "network" in kwargs:
                kwargs["network"] = NetworkConfig(**kwargs["network"])
            if "ppo" in kwargs:
                kwargs["ppo"] = PPOConfig.from_json(kwargs["ppo"])
            if "ddpg" in kwargs:
                kwargs["ddpg"] = DDPGConfig.from_json(kwargs["ddpg"])
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise MasterError(f"invalid config: {exc}") from exc

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CycleStats:
    cycle: int
    num_experiences: int
    episode_returns: list

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.episode_returns))

    @property
    def min_return(self) -> float:
        return float(np.min(self.episode_returns))

    @property
    def max_return(self) -> float:
        return float(np.max(self.episode_returns))


def fmt(value) -> str:
    """Shortest round-trip decimal form, stable across runs."""
    return repr(float(value))


class ResultsWriter:
    """Appends the per-cycle CSV rows and writes checkpoints/traces."""

    def __init__(self, output_dir):
        self.dir = Path(output_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.training_path = self.dir / "training_returns.csv"
        self.validation_path = self.dir / "validation_returns.csv"
        self.training_path.write_text(TRAINING_HEADER + "\n")
        self.validation_path.write_text(VALIDATION_HEADER + "\n")

    def write_config(self, config: MasterConfig):
        (self.dir / "config.json").write_text(
            json.dumps(config.to_json(), indent=2) + "\n")

    def append_training_row(self, stats: CycleStats):
        row = (f"{stats.cycle},{stats.num_experiences},{fmt(stats.mean_return)},"
               f"{fmt(stats.min_return)},{fmt(stats.max_return)}\n")
        with open(self.training_path, "a") as f:
            f.write(row)

    def append_validation_row(self, cycle: int, episode_return: float):
        with open(self.validation_path, "a") as f:
            f.write(f"{cycle},{fmt(episode_return)}\n")

    def write_validation_trace(self, cycle: int, rows):
        path = self.dir / f"validation_trace_{cycle}.csv"
        lines = [TRACE_HEADER]
        for t, x, y, phi_dot, action, reward in rows:
            lines.append(f"{t},{fmt(x)},{fmt(y)},{fmt(phi_dot)},"
                         f"{fmt(action)},{fmt(reward)}")
        path.write_text("\n".join(lines) + "\n")

    def write_checkpoint(self, cycle: int, manifest: dict):
        (self.dir / f"weights_{cycle}.json").write_text(json.dumps(manifest))


class Master:
    """Drives the training loop against whatever minions are connected."""

    def __init__(self, config: MasterConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        if config.algorithm == "ppo":
            self.learner = PPOLearner(config.ppo, PENDULUM_SPACE.obs_dims,
                                      PENDULUM_SPACE.action_dims, self.rng)
        else:
            self.learner = DDPGLearner(config.ddpg, PENDULUM_SPACE.obs_dims,
                                       PENDULUM_SPACE.action_dims, self.rng)
        net = config.network
        self.server = Server(
            net.host, net.port,
            handshake_info={
                "space_spec": PENDULUM_SPACE.to_json(),
                "episode_steps": config.episode_steps,
                "algorithm": config.algorithm,
            },
            heartbeat_timeout=net.heartbeat_timeout,
            monitor_period=net.monitor_period,
            task_deadline=net.task_deadline,
            handshake_timeout=net.handshake_timeout,
        )
        self.writer = ResultsWriter(config.output_dir)
        self.space = PENDULUM_SPACE
        self._broadcast_msg = None
        self._weight_digest = None
        self.retain_experiences = False
        self.experience_log = {}
        self.validation_returns = []
        self._stop_requested = False

    # -- weights -----------------------------------------------------------

    def _acting_net(self):
        if self.config.algorithm == "ppo":
            return self.learner.policy
        return self.learner.actor

    def _make_broadcast(self, cycle: int) -> WireMessage:
        net = self._acting_net()
        self._weight_digest = net.digest()
        payload = {
            "algorithm": self.config.algorithm,
            "weights": net.to_manifest(),
            "weight_digest": self._weight_digest,
        }
        if self.config.algorithm == "ddpg":
            payload["noise_std"] = self.config.ddpg.noise_std
        return WireMessage("model_broadcast", cycle=cycle, payload=payload)

    def checkpoint_manifest(self, cycle: int) -> dict:
        manifest = {"cycle": cycle, "algorithm": self.config.algorithm}
        if self.config.algorithm == "ppo":
            manifest["policy"] = self.learner.policy.to_manifest()
            manifest["vf"] = self.learner.vf.to_manifest()
            manifest["kl_coeff"] = self.learner.kl_coeff
        else:
            manifest["actor"] = self.learner.actor.to_manifest()
            manifest["critic"] = self.learner.critic.to_manifest()
            manifest["target_actor"] = self.learner.target_actor.to_manifest()
            manifest["target_critic"] = self.learner.target_critic.to_manifest()
        return manifest

    # -- run loop ----------------------------------------------------------

    def run(self) -> dict:
        """Run the configured number of cycles; returns a summary dict."""
        cfg = self.config
        self.server.start()
        self.writer.write_config(cfg)
        if cfg.total_cycles > 0:
            self._wait_for_minions(cfg.network.min_minions)
        completed = 0
        try:
            for cycle in range(1, cfg.total_cycles + 1):
                stats = self._run_cycle(cycle)
                self.writer.append_training_row(stats)
                completed = cycle
                if cycle % cfg.validation_interval == 0:
                    ret = self._run_validation(cycle)
                    logger.info("cycle %d validation return %.2f", cycle, ret)
                    if (cfg.stop_on_validation_return is not None
                            and ret >= cfg.stop_on_validation_return):
                        logger.info("validation target reached; stopping")
                        break
                if cfg.checkpoint_interval and cycle % cfg.checkpoint_interval == 0:
                    self.writer.write_checkpoint(cycle, self.checkpoint_manifest(cycle))
                if self._stop_requested:
                    break
        finally:
            if completed:
                self.writer.write_checkpoint(completed,
                                             self.checkpoint_manifest(completed))
            self.server.stop(notify=True)
        return {
            "cycles_completed": completed,
            "validation_returns": list(self.validation_returns),
            "output_dir": str(self.writer.dir),
        }

    def request_stop(self):
        self._stop_requested = True

    def _wait_for_minions(self, count: int):
        while len(self.server.live_minions()) < count:
            try:
                self.server.events.get(timeout=0.2)
            except queue.Empty:
                pass

    # -- one training cycle ------------------------------------------------

    def _run_cycle(self, cycle: int) -> CycleStats:
        cfg = self.config
        self._broadcast_msg = self._make_broadcast(cycle)
        self.server.broadcast(self._broadcast_msg)
        collected = self._collect_training_episodes(cycle)

        order = sorted(collected)
        episodes = [collected[i] for i in order]
        if self.retain_experiences:
            self.experience_log[cycle] = [
                (i, collected[i][0], collected[i][1]) for i in order]

        trajectories = [
            Trajectory(experiences, episode_id=index, seed=tuple(seed))
            for index, (seed, experiences) in zip(order, episodes)
        ]
        returns = [t.undiscounted_return for t in trajectories]
        num_experiences = sum(len(t) for t in trajectories)

        if cfg.algorithm == "ppo":
            for t in trajectories:
                self.learner.postprocess_rollout(t)
            batch = assemble_train_batch(trajectories, "ppo",
                                         gamma=cfg.ppo.gamma, lam=cfg.ppo.lam)
            train_stats = self.learner.train_on_batch(batch, self.rng)
        else:
            batch = assemble_train_batch(trajectories, "ddpg")
            self.learner.buffer.add_batch(batch)
            train_stats = self.learner.cycle_train(self.rng)
        logger.info("cycle %d: %d experiences, mean return %.2f, %s",
                    cycle, num_experiences, float(np.mean(returns)), train_stats)
        return CycleStats(cycle, num_experiences, returns)

    def _episode_seed(self, cycle: int, index: int) -> list:
        return [int(self.config.seed), int(cycle), int(index)]

    def _collect_training_episodes(self, cycle: int) -> dict:
        """Dispatch episode indices to idle minions until all are uploaded."""
        cfg = self.config
        pending = deque(range(cfg.episodes_per_cycle))
        outstanding = {}
        collected = {}

        while len(collected) < cfg.episodes_per_cycle:
            self._assign_pending(cycle, pending, outstanding)
            try:
                kind, session, data = self.server.events.get(timeout=0.1)
            except queue.Empty:
                continue
            if kind == "joined":
                self.server.send(session, self._broadcast_msg)
            elif kind == "died":
                lost = outstanding.pop(session.minion_id, [])
                if lost:
                    logger.warning("requeueing episodes %s from %s",
                                   lost, session.minion_id)
                    pending.extend(lost)
            elif kind == "error":
                lost = outstanding.pop(session.minion_id, [])
                pending.extend(lost)
                self.server.mark_idle(session)
                self.server.send(session, self._broadcast_msg)
            elif kind == "upload":
                self._integrate_upload(cycle, session, data, outstanding,
                                       pending, collected)
        return collected

    def _assign_pending(self, cycle: int, pending: deque, outstanding: dict):
        idle = [s for s in self.server.idle_minions()
                if s.minion_id not in outstanding]
        if not idle or not pending:
            return
        shares = split_workload(len(pending), len(idle))
        for session, share in zip(idle, shares):
            if share == 0:
                continue
            indices = [pending.popleft() for _ in range(share)]
            payload = {
                "num_episodes": share,
                "episode_indices": indices,
                "episode_seeds": [self._episode_seed(cycle, i) for i in indices],
            }
            task = WireMessage("generate_training_data", cycle=cycle,
                               payload=payload)
            self.server.mark_working(session, payload)
            if self.server.send(session, task):
                outstanding[session.minion_id] = list(indices)
            else:
                pending.extend(indices)

    def _integrate_upload(self, cycle: int, session, message: WireMessage,
                          outstanding: dict, pending: deque, collected: dict):
        assigned = outstanding.pop(session.minion_id, [])
        ok, episodes = self._check_upload(message, cycle, "training")
        if not ok:
            pending.extend(assigned)
            self.server.mark_idle(session)
            self.server.send(session, self._broadcast_msg)
            return
        taken = set()
        for entry in episodes:
            index = entry["episode_index"]
            collected[index] = (entry["seed"], entry["experiences"])
            taken.add(index)
        for index in assigned:
            if index not in taken:
                pending.append(index)
        self.server.mark_idle(session)

    def _check_upload(self, message: WireMessage, cycle: int, kind: str):
        """Validate an upload end to end; returns (ok, parsed_episodes)."""
        payload = message.payload
        if message.cycle != cycle:
            logger.warning("discarding upload for stale cycle %d", message.cycle)
            return False, None
        if payload.get("kind") != kind:
            logger.warning("discarding %s upload while expecting %s",
                           payload.get("kind"), kind)
            return False, None
        if payload.get("weight_digest") != self._weight_digest:
            logger.warning("discarding upload generated under stale weights")
            return False, None
        episodes = []
        try:
            for entry in payload["episodes"]:
                experiences = [Experience.from_wire(e)
                               for e in entry["experiences"]]
                if len(experiences) != self.config.episode_steps:
                    raise ProtocolError(
                        f"episode has {len(experiences)} steps, expected "
                        f"{self.config.episode_steps}")
                episodes.append({
                    "episode_index": int(entry["episode_index"]),
                    "seed": entry["seed"],
                    "experiences": experiences,
                })
        except (KeyError, TypeError, ValueError, ProtocolError) as exc:
            logger.warning("discarding malformed upload: %s", exc)
            return False, None
        return True, episodes

    # -- validation --------------------------------------------------------

    def _run_validation(self, cycle: int) -> float:
        """Run one deterministic episode on the earliest-joined idle minion."""
        while True:
            session = self._await_idle_minion()
            task = WireMessage("generate_validation_data", cycle=cycle)
            self.server.mark_working(session, {"validation": True})
            if not self.server.send(session, task):
                continue
            result = self._await_validation_upload(cycle, session)
            if result is not None:
                break
        experiences = result
        rows = []
        for t, exp in enumerate(experiences):
            x, y, phi_dot = self.space.denormalize_obs(exp.obs)
            torque = float(self.space.map_action(exp.action)[0])
            rows.append((t, x, y, phi_dot, torque, exp.reward))
        episode_return = float(sum(e.reward for e in experiences))
        self.writer.append_validation_row(cycle, episode_return)
        self.writer.write_validation_trace(cycle, rows)
        self.validation_returns.append((cycle, episode_return))
        return episode_return

    def _await_idle_minion(self):
        while True:
            idle = self.server.idle_minions()
            if idle:
                return idle[0]
            try:
                kind, session, _ = self.server.events.get(timeout=0.2)
            except queue.Empty:
                continue
            if kind == "joined":
                self.server.send(session, self._broadcast_msg)

    def _await_validation_upload(self, cycle: int, session):
        """Wait for the session's upload; None means retry with another minion."""
        while True:
            try:
                kind, evt_session, data = self.server.events.get(timeout=0.2)
            except queue.Empty:
                continue
            if kind == "joined":
                self.server.send(evt_session, self._broadcast_msg)
            elif kind == "died" and evt_session is session:
                logger.warning("validation minion died; retrying")
                return None
            elif kind == "error" and evt_session is session:
                self.server.mark_idle(evt_session)
                self.server.send(evt_session, self._broadcast_msg)
                return None
            elif kind == "upload" and evt_session is session:
                ok, episodes = self._check_upload(data, cycle, "validation")
                self.server.mark_idle(session)
                if not ok or len(episodes) != 1:
                    self.server.send(session, self._broadcast_msg)
                    return None
                return episodes[0]["experiences"]
