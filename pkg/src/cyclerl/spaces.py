"""Observation/action spaces and the normalized <-> denormalized mappings.

Networks only ever see normalized quantities: observations are min-max mapped
onto [-1, +1] per dimension, and the (unbounded) normalized actions are mapped
into the environment's physical range with a scaled hyperbolic tangent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """A value or bound is outside the operation's domain."""


def _check_bounds(lo: float, hi: float):
    if not lo < hi:
        raise DomainError(f"need lo < hi, got [{lo}, {hi}]")


def min_max_normalize(x, lo: float, hi: float):
    """Affinely map [lo, hi] onto [-1, +1], clamping out-of-range inputs."""
    _check_bounds(lo, hi)
    n = 2.0 * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo) - 1.0
    return np.clip(n, -1.0, 1.0)


def min_max_denormalize(n, lo: float, hi: float):
    """Inverse of :func:`min_max_normalize` on [-1, +1]."""
    _check_bounds(lo, hi)
    return lo + (np.asarray(n, dtype=np.float64) + 1.0) * 0.5 * (hi - lo)


def tanh_action_map(u, lo: float, hi: float):
    """Map an unbounded normalized action into (lo, hi) via a scaled tanh."""
    _check_bounds(lo, hi)
    return lo + (np.tanh(u) + 1.0) * 0.5 * (hi - lo)


@dataclass(frozen=True)
class SpaceSpec:
    """Per-dimension denormalized bounds of the observation and action space."""

    obs_bounds: tuple[tuple[float, float], ...]
    action_bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.obs_bounds or not self.action_bounds:
            raise DomainError("spaces need at least one dimension each")
        for lo, hi in (*self.obs_bounds, *self.action_bounds):
            _check_bounds(lo, hi)

    @property
    def obs_dims(self) -> int:
        return len(self.obs_bounds)

    @property
    def action_dims(self) -> int:
        return len(self.action_bounds)

    def normalize_obs(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (self.obs_dims,):
            raise DomainError(f"observation shape {raw.shape} != ({self.obs_dims},)")
        return np.array(
            [min_max_normalize(v, lo, hi) for v, (lo, hi) in zip(raw, self.obs_bounds)]
        )

    def denormalize_obs(self, norm) -> np.ndarray:
        norm = np.asarray(norm, dtype=np.float64)
        if norm.shape != (self.obs_dims,):
            raise DomainError(f"observation shape {norm.shape} != ({self.obs_dims},)")
        return np.array(
            [min_max_denormalize(v, lo, hi) for v, (lo, hi) in zip(norm, self.obs_bounds)]
        )

    def map_action(self, u) -> np.ndarray:
        """tanh-map a normalized action vector into the denormalized range."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.action_dims,):
            raise DomainError(f"action shape {u.shape} != ({self.action_dims},)")
        return np.array(
            [tanh_action_map(v, lo, hi) for v, (lo, hi) in zip(u, self.action_bounds)]
        )

    def to_json(self) -> dict:
        return {
            "observations": [list(b) for b in self.obs_bounds],
            "actions": [list(b) for b in self.action_bounds],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SpaceSpec":
        try:
            obs = tuple((float(lo), float(hi)) for lo, hi in data["observations"])
            act = tuple((float(lo), float(hi)) for lo, hi in data["actions"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"bad space spec: {exc}") from exc
        return cls(obs, act)
