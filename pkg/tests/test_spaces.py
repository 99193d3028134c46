"""Unit tests for bounded-interval normalization and the space contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclerl.spaces import (
    DomainError,
    SpaceSpec,
    min_max_denormalize,
    min_max_normalize,
    tanh_action_map,
)


class TestMinMax:
    def test_upper_bound_maps_to_one(self):
        assert min_max_normalize(8.0, -8.0, 8.0) == pytest.approx(1.0)

    def test_midpoint_maps_to_zero(self):
        assert min_max_normalize(0.0, -8.0, 8.0) == pytest.approx(0.0)

    def test_roundtrip(self):
        x = min_max_denormalize(min_max_normalize(3.7, -8.0, 8.0), -8.0, 8.0)
        assert x == pytest.approx(3.7, abs=1e-12)

    def test_out_of_range_input_clamped(self):
        assert min_max_normalize(12.0, -8.0, 8.0) == 1.0
        assert min_max_normalize(-12.0, -8.0, 8.0) == -1.0

    def test_degenerate_interval_rejected(self):
        with pytest.raises(DomainError):
            min_max_normalize(0.0, 2.0, 2.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=-8.0, max_value=8.0))
    def test_roundtrip_property(self, x):
        back = min_max_denormalize(min_max_normalize(x, -8.0, 8.0), -8.0, 8.0)
        assert back == pytest.approx(x, abs=1e-9)


class TestTanhActionMap:
    def test_zero_maps_to_zero(self):
        assert tanh_action_map(0.0, -2.0, 2.0) == pytest.approx(0.0)

    def test_saturates_at_bounds(self):
        assert tanh_action_map(50.0, -2.0, 2.0) == pytest.approx(2.0, abs=1e-9)
        assert tanh_action_map(-50.0, -2.0, 2.0) == pytest.approx(-2.0, abs=1e-9)

    def test_atanh_half_maps_to_one(self):
        # 2 * tanh(atanh(0.5)) = 1
        assert tanh_action_map(0.549306, -2.0, 2.0) == pytest.approx(1.0,
                                                                     abs=1e-5)

    def test_strictly_inside_open_interval(self):
        # tanh saturates to exactly +/-1 in float64 somewhere around |u|=19,
        # so strict interior bounds only hold for moderate inputs.
        for u in (-10.0, -1.0, 0.3, 10.0):
            m = tanh_action_map(u, -2.0, 2.0)
            assert -2.0 < m < 2.0
        for u in (-1e6, -30.0, 30.0, 1e6):
            m = tanh_action_map(u, -2.0, 2.0)
            assert -2.0 <= m <= 2.0

    def test_monotone(self):
        us = np.linspace(-4, 4, 101)
        ms = tanh_action_map(us, -2.0, 2.0)
        assert (np.diff(ms) > 0).all()


class TestSpaceSpec:
    def make(self):
        return SpaceSpec(obs_bounds=((-1.0, 1.0), (-1.0, 1.0), (-8.0, 8.0)),
                         action_bounds=((-2.0, 2.0),))

    def test_dims(self):
        space = self.make()
        assert space.obs_dims == 3
        assert space.action_dims == 1

    def test_normalize_denormalize_roundtrip(self):
        space = self.make()
        raw = np.array([0.3, -0.8, 5.0])
        norm = space.normalize_obs(raw)
        assert norm[2] == pytest.approx(5.0 / 8.0)
        np.testing.assert_allclose(space.denormalize_obs(norm), raw,
                                   atol=1e-12)

    def test_map_action(self):
        space = self.make()
        assert space.map_action(np.array([0.0]))[0] == pytest.approx(0.0)
        assert space.map_action(np.array([100.0]))[0] == pytest.approx(2.0)

    def test_json_roundtrip(self):
        space = self.make()
        again = SpaceSpec.from_json(space.to_json())
        assert again == space

    def test_bad_bounds_rejected(self):
        with pytest.raises(DomainError):
            SpaceSpec(obs_bounds=((1.0, -1.0),), action_bounds=((-2.0, 2.0),))

    def test_wrong_arity_rejected(self):
        space = self.make()
        with pytest.raises(DomainError):
            space.normalize_obs(np.array([1.0, 2.0]))
