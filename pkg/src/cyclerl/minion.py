"""Minion worker: connects to the master, runs episodes, uploads experiences.

The minion holds no learner state.  It receives acting weights each cycle,
rolls out the requested number of episodes on its local environment copy,
and sends the transitions back tagged with the weight digest they were
generated under.  Every episode gets its own seeded generator, supplied by
the master, so results do not depend on which minion ran which episode.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .experience import Experience
from .nn import NeuralNetwork
from .pendulum import PendulumEnv
from .ppo import GaussianDist
from .protocol import (
    PROTOCOL_VERSION,
    FrameDecoder,
    ProtocolError,
    WireMessage,
    send_message,
)
from .spaces import SpaceSpec

logger = logging.getLogger(__name__)


@dataclass
class MinionConfig:
    master_host: str = "127.0.0.1"
    master_port: int = 5555
    minion_id: str = "minion"
    heartbeat_interval: float = 5.0
    connect_retries: int = 10
    retry_delay: float = 1.0


class MinionError(Exception):
    """The minion cannot continue (handshake rejected, master unreachable)."""


def act(net: NeuralNetwork, algorithm: str, obs: np.ndarray, rng,
        deterministic: bool, noise_std: float = 0.0) -> np.ndarray:
    """Raw action for one normalized observation under the given weights."""
    out = net.forward(obs)
    if algorithm == "ppo":
        d = out.shape[-1] // 2
        dist = GaussianDist(out[:d], out[d:])
        if deterministic:
            return dist.mean
        u, _ = dist.sample(rng)
        return u
    if deterministic or noise_std == 0.0:
        return out
    return out + noise_std * rng.standard_normal(out.shape)


def run_episode(env: PendulumEnv, space: SpaceSpec, net: NeuralNetwork,
                algorithm: str, rng, deterministic: bool,
                noise_std: float = 0.0) -> list:
    """Roll out one full episode; returns the Experience list.

    Training episodes draw the reset state and all action noise from ``rng``;
    validation episodes (deterministic=True) need no generator at all.
    """
    mode = "validation" if deterministic else "training"
    state = env.reset(mode=mode, rng=rng)
    experiences = []
    done = False
    while not done:
        obs = env.observe(state)
        u = act(net, algorithm, obs, rng, deterministic, noise_std)
        torque = float(space.map_action(u)[0])
        state, reward, done = env.step(state, torque)
        # The stored flag marks terminal successor states, which the pendulum
        # does not have: episodes end only because the step budget runs out.
        # Recording the cutoff as a truncation lets the learners bootstrap
        # value estimates through it instead of treating the final state as
        # worthless, which would assign conflicting targets to mid-swing
        # states depending on where in the episode they happened to occur.
        experiences.append(Experience(
            obs=obs, action=u, next_obs=env.observe(state),
            reward=reward, done=False))
    return experiences


class Minion:
    """Client-side main loop.  ``run()`` blocks until shutdown or failure."""

    def __init__(self, config: MinionConfig):
        self.config = config
        self.sock = None
        self.minion_id = config.minion_id
        self.space = None
        self.env = None
        self.algorithm = None
        self.acting_net = None
        self.weight_digest = None
        self.noise_std = 0.0
        self._decoder = FrameDecoder()
        self._inbox = deque()
        self._send_lock = threading.Lock()
        self._stop = threading.Event()

    # -- connection --------------------------------------------------------

    def run(self) -> int:
        """Connect, serve tasks until the master says shutdown.  Returns 0
        on a clean shutdown."""
        try:
            self._connect_with_retries()
            self._handshake()
        except (OSError, ProtocolError, MinionError) as exc:
            logger.error("could not join master: %s", exc)
            self._close()
            return 1
        heartbeat = threading.Thread(target=self._heartbeat_loop, daemon=True)
        heartbeat.start()
        try:
            return self._serve()
        finally:
            self._stop.set()
            self._close()

    def _connect_with_retries(self):
        delay = self.config.retry_delay
        last_exc = None
        for attempt in range(self.config.connect_retries):
            try:
                self.sock = socket.create_connection(
                    (self.config.master_host, self.config.master_port), timeout=10.0)
                self.sock.settimeout(None)
                return
            except OSError as exc:
                last_exc = exc
                logger.info("connect attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.config.connect_retries - 1:
                    time.sleep(delay)
                    delay = min(delay * 2.0, 30.0)
        raise MinionError(f"master unreachable after "
                          f"{self.config.connect_retries} attempts: {last_exc}")

    def _handshake(self):
        self._send(WireMessage("hello", payload={
            "minion_id": self.config.minion_id,
            "protocol_version": PROTOCOL_VERSION,
        }))
        message = self._read_one(timeout=10.0)
        if message.type == "error":
            raise MinionError(message.payload.get("reason", "master refused"))
        if message.type != "hello_ack" or not message.payload.get("accepted"):
            raise MinionError(f"unexpected handshake reply {message.type}")
        self.minion_id = message.payload["minion_id"]
        self.space = SpaceSpec.from_json(message.payload["space_spec"])
        self.env = PendulumEnv(int(message.payload["episode_steps"]))
        self.algorithm = message.payload.get("algorithm")
        logger.info("joined as %s (algorithm %s)", self.minion_id, self.algorithm)

    def _close(self):
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass

    # -- io ----------------------------------------------------------------

    def _send(self, message: WireMessage):
        with self._send_lock:
            send_message(self.sock, message)

    def _read_one(self, timeout=None) -> WireMessage:
        """Next message from the stream; later pipelined messages stay queued."""
        if self._inbox:
            return self._inbox.popleft()
        self.sock.settimeout(timeout)
        try:
            while not self._inbox:
                chunk = self.sock.recv(1 << 20)
                if not chunk:
                    raise ProtocolError("master closed the connection")
                for payload in self._decoder.feed(chunk):
                    self._inbox.append(WireMessage.decode_payload(payload))
            return self._inbox.popleft()
        finally:
            self.sock.settimeout(None)

    def _heartbeat_loop(self):
        while not self._stop.wait(self.config.heartbeat_interval):
            try:
                self._send(WireMessage("heartbeat"))
            except OSError:
                return

    def _serve(self) -> int:
        while True:
            try:
                message = self._read_one()
            except ProtocolError as exc:
                logger.error("connection lost: %s", exc)
                return 1
            except OSError as exc:
                logger.error("connection lost: %s", exc)
                return 1
            if message.type == "shutdown":
                logger.info("shutdown received")
                return 0
            self._handle(message)

    def _handle(self, message: WireMessage):
        if message.type == "model_broadcast":
            self._load_model(message)
        elif message.type == "generate_training_data":
            self._run_training(message)
        elif message.type == "generate_validation_data":
            self._run_validation(message)
        elif message.type == "error":
            logger.warning("master reported: %s", message.payload.get("reason"))
        elif message.type == "heartbeat":
            pass
        else:
            logger.warning("ignoring unexpected %s message", message.type)

    # -- tasks -------------------------------------------------------------

    def _load_model(self, message: WireMessage):
        payload = message.payload
        self.acting_net = NeuralNetwork.from_manifest(payload["weights"])
        self.weight_digest = payload["weight_digest"]
        self.algorithm = payload.get("algorithm", self.algorithm)
        self.noise_std = float(payload.get("noise_std", 0.0))

    def _run_training(self, message: WireMessage):
        if self.acting_net is None:
            self._report_error(message.cycle, "no model received yet")
            return
        episodes = []
        indices = message.payload["episode_indices"]
        seeds = message.payload["episode_seeds"]
        for index, seed in zip(indices, seeds):
            rng = np.random.default_rng(seed)
            episodes.append({
                "episode_index": int(index),
                "seed": list(seed),
                "experiences": [e.to_wire() for e in
                                self._rollout(rng, deterministic=False)],
            })
        self._send(WireMessage("experience_upload", cycle=message.cycle, payload={
            "kind": "training",
            "weight_digest": self.weight_digest,
            "episodes": episodes,
        }))

    def _run_validation(self, message: WireMessage):
        if self.acting_net is None:
            self._report_error(message.cycle, "no model received yet")
            return
        experiences = self._rollout(None, deterministic=True)
        self._send(WireMessage("experience_upload", cycle=message.cycle, payload={
            "kind": "validation",
            "weight_digest": self.weight_digest,
            "episodes": [{
                "episode_index": 0,
                "seed": None,
                "experiences": [e.to_wire() for e in experiences],
            }],
        }))

    def _report_error(self, cycle: int, reason: str):
        logger.error("task for cycle %d failed: %s", cycle, reason)
        try:
            self._send(WireMessage("error", cycle=cycle, payload={"reason": reason}))
        except OSError:
            pass

    # -- acting ------------------------------------------------------------

    def _rollout(self, rng, deterministic: bool) -> list:
        return run_episode(self.env, self.space, self.acting_net,
                           self.algorithm, rng, deterministic, self.noise_std)
