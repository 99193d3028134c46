"""Cycle-based reinforcement learning with remote rollout workers.

A master process owns the networks and the training loop; any number of
minion processes connect over TCP, receive weights each cycle, run episodes
on the environment, and upload the resulting experiences.  PPO and DDPG
learners are included, along with a pendulum swing-up environment and a
report exporter for the CSV files the master writes.
"""

__version__ = "0.1.0"

from .experience import Experience, TrainBatch, Trajectory
from .nn import NeuralNetwork
from .pendulum import PendulumEnv
from .spaces import SpaceSpec

__all__ = [
    "Experience",
    "NeuralNetwork",
    "PendulumEnv",
    "SpaceSpec",
    "TrainBatch",
    "Trajectory",
    "__version__",
]
