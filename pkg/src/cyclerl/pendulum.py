"""Inverted pendulum swing-up: the reference benchmark environment.

A rod (length 1 m, mass 1 kg) hangs from a pivot; the agent applies a torque
of at most 2 N*m per 0.05 s time step and is rewarded for holding the rod
upright (angle 0) and still.  Dynamics follow the widely used semi-implicit
Euler update with g = 9.81 m/s^2: the angular velocity is advanced first and
the new velocity moves the angle.  The per-step reward is

    -(wrap(phi)^2 + 0.1*phi_dot^2 + 0.001*torque^2)

evaluated on the state the torque was applied to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spaces import SpaceSpec

GRAVITY = 9.81
ROD_LENGTH = 1.0
ROD_MASS = 1.0
TIME_STEP = 0.05
MAX_SPEED = 8.0
MAX_TORQUE = 2.0
DEFAULT_EPISODE_STEPS = 200

#: Denormalized bounds of (x, y, phi_dot) observations and the torque action.
PENDULUM_SPACE = SpaceSpec(
    obs_bounds=((-1.0, 1.0), (-1.0, 1.0), (-MAX_SPEED, MAX_SPEED)),
    action_bounds=((-MAX_TORQUE, MAX_TORQUE),),
)


class EnvironmentFault(RuntimeError):
    """The environment reached a non-finite state; the episode is aborted."""


def wrap_angle(phi: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(phi + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass
class PendulumState:
    """Angle (rad, 0 = upright), angular velocity (rad/s), and step counter."""

    phi: float
    phi_dot: float
    t: int = 0


class PendulumEnv:
    """Stateless-step pendulum: all mutation goes through returned states."""

    def __init__(self, episode_steps: int = DEFAULT_EPISODE_STEPS):
        if episode_steps < 1:
            raise ValueError("episode_steps must be >= 1")
        self.episode_steps = episode_steps

    @property
    def space(self) -> SpaceSpec:
        return PENDULUM_SPACE

    def reset(self, mode: str = "training", rng: np.random.Generator | None = None,
              initial_conditions: dict | None = None) -> PendulumState:
        """Start a new episode.

        Training episodes start at a uniformly random angle with a small
        random angular velocity; validation episodes start with the rod
        hanging still straight down (phi = pi) unless explicit initial
        conditions are given.
        """
        if initial_conditions is not None:
            return PendulumState(
                phi=wrap_angle(float(initial_conditions["phi"])),
                phi_dot=float(initial_conditions["phi_dot"]),
            )
        if mode == "validation":
            return PendulumState(phi=math.pi, phi_dot=0.0)
        if mode != "training":
            raise ValueError(f"unknown reset mode {mode!r}")
        if rng is None:
            rng = np.random.default_rng()
        return PendulumState(
            phi=wrap_angle(rng.uniform(-math.pi, math.pi)),
            phi_dot=rng.uniform(-1.0, 1.0),
        )

    def step(self, state: PendulumState, torque: float):
        """Advance one time step; returns (next_state, reward, done)."""
        if not (math.isfinite(state.phi) and math.isfinite(state.phi_dot)):
            raise EnvironmentFault("non-finite pendulum state")
        if not math.isfinite(torque):
            raise EnvironmentFault("non-finite torque")
        torque = min(max(torque, -MAX_TORQUE), MAX_TORQUE)

        phi = state.phi
        reward = -(wrap_angle(phi) ** 2
                   + 0.1 * state.phi_dot ** 2
                   + 0.001 * torque ** 2)

        accel = (3.0 * GRAVITY / (2.0 * ROD_LENGTH) * math.sin(phi)
                 + 3.0 / (ROD_MASS * ROD_LENGTH ** 2) * torque)
        phi_dot = state.phi_dot + accel * TIME_STEP
        phi_dot = min(max(phi_dot, -MAX_SPEED), MAX_SPEED)
        phi = wrap_angle(phi + phi_dot * TIME_STEP)

        next_state = PendulumState(phi=phi, phi_dot=phi_dot, t=state.t + 1)
        done = next_state.t >= self.episode_steps
        return next_state, reward, done

    def observe(self, state: PendulumState) -> np.ndarray:
        """Normalized observation (cos phi, sin phi, phi_dot / max_speed)."""
        raw = np.array([
            ROD_LENGTH * math.cos(state.phi),
            ROD_LENGTH * math.sin(state.phi),
            state.phi_dot,
        ])
        return self.space.normalize_obs(raw)


def mechanical_energy(phi: float, phi_dot: float) -> float:
    """Rod-model energy: rotational kinetic plus center-of-mass potential.

    With phi = 0 pointing up, the center of mass sits at height
    (l/2)*cos(phi), so the potential term is +m*g*(l/2)*cos(phi); this is
    the quantity conserved by the torque-free dynamics.
    """
    inertia = ROD_MASS * ROD_LENGTH ** 2 / 3.0
    return (0.5 * inertia * phi_dot ** 2
            + ROD_MASS * GRAVITY * (ROD_LENGTH / 2.0) * math.cos(phi))
