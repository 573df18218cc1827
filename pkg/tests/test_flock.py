import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vflock.flock import (
    ControlAction,
    Disturbance,
    DynamicsBounds,
    FlockState,
    VGeometry,
    clamp_action,
    make_v_formation,
    remove_birds,
    sample_random_state,
    step_flock,
    wing_lengths,
)


def state_of(positions, velocities) -> FlockState:
    return FlockState(np.asarray(positions, float), np.asarray(velocities, float))


class TestStepFlock:
    def test_zero_action_advances_by_velocity(self, bounds):
        s = state_of([[0, 0]], [[1, 0]])
        out = step_flock(s, ControlAction.zero(1), Disturbance.zero(1), bounds)
        assert np.array_equal(out.positions, [[1, 0]])
        assert np.array_equal(out.velocities, [[1, 0]])

    def test_acceleration_moves_position_same_step(self):
        s = state_of([[0, 0]], [[0, 0]])
        out = step_flock(
            s, ControlAction([[1, 0]]), Disturbance.zero(1), DynamicsBounds(v_max=10)
        )
        assert np.array_equal(out.velocities, [[1, 0]])
        assert np.array_equal(out.positions, [[1, 0]])

    def test_displacement_adds_to_position_only(self, bounds):
        s = state_of([[0, 0]], [[1, 0]])
        out = step_flock(s, ControlAction.zero(1), Disturbance([[0.5, 0]]), bounds)
        assert np.array_equal(out.positions, [[1.5, 0]])
        assert np.array_equal(out.velocities, [[1, 0]])

    def test_speed_capped_at_v_max(self):
        s = state_of([[0, 0]], [[1.5, 0]])
        out = step_flock(
            s, ControlAction([[1.0, 0]]), Disturbance.zero(1), DynamicsBounds(v_max=2.0)
        )
        assert np.linalg.norm(out.velocities[0]) == pytest.approx(2.0)
        assert out.velocities[0][1] == 0.0

    def test_dimension_mismatch_rejected(self, bounds):
        s = state_of([[0, 0], [1, 1]], [[1, 0], [1, 0]])
        with pytest.raises(ValueError, match="1 birds"):
            step_flock(s, ControlAction([[0, 0]]), Disturbance.zero(2), bounds)

    def test_non_finite_input_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            state_of([[0, np.nan]], [[1, 0]])
        with pytest.raises(ValueError, match="non-finite"):
            ControlAction([[np.inf, 0]])

    def test_purity_bitwise(self, bounds, rng):
        s = state_of(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
        a = ControlAction(rng.normal(size=(5, 2)) * 0.3)
        d = Disturbance(rng.normal(size=(5, 2)) * 0.1)
        first = step_flock(s, a, d, bounds)
        second = step_flock(s, a, d, bounds)
        assert first == second

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_speed_bound_holds_after_any_step(self, seed):
        rng = np.random.default_rng(seed)
        bounds = DynamicsBounds(v_max=2.0, rho=0.9)
        s = state_of(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)) * 3)
        a = clamp_action(ControlAction(rng.normal(size=(4, 2)) * 5), s, bounds)
        out = step_flock(s, a, Disturbance.zero(4), bounds)
        speeds = np.linalg.norm(out.velocities, axis=1)
        assert np.all(speeds <= bounds.v_max * (1 + 2e-9))

    def test_drift_position_change_equals_velocity_bitwise(self, bounds, rng):
        vel = rng.uniform(-1, 1, size=(6, 2))
        s = state_of(rng.normal(size=(6, 2)), vel)
        out = step_flock(s, ControlAction.zero(6), Disturbance.zero(6), bounds)
        assert np.array_equal(out.positions, s.positions + s.velocities)


class TestClampAction:
    def test_rescales_to_bound(self):
        s = state_of([[0, 0]], [[1, 0]])
        out = clamp_action(ControlAction([[10, 0]]), s, DynamicsBounds(v_max=2, rho=0.5))
        assert np.allclose(out.accelerations, [[0.5, 0]])

    def test_inside_bound_unchanged_bitwise(self):
        s = state_of([[0, 0]], [[1, 0]])
        a = ControlAction([[0.1, 0]])
        out = clamp_action(a, s, DynamicsBounds(v_max=2, rho=0.5))
        assert np.array_equal(out.accelerations, a.accelerations)

    def test_zero_velocity_forces_zero_acceleration(self, bounds):
        s = state_of([[0, 0]], [[0, 0]])
        out = clamp_action(ControlAction([[3, 4]]), s, bounds)
        assert np.array_equal(out.accelerations, [[0, 0]])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_idempotent_bitwise(self, seed):
        rng = np.random.default_rng(seed)
        bounds = DynamicsBounds(v_max=2.0, rho=0.9)
        s = state_of(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
        once = clamp_action(ControlAction(rng.normal(size=(3, 2)) * 4), s, bounds)
        twice = clamp_action(once, s, bounds)
        assert np.array_equal(once.accelerations, twice.accelerations)


class TestVFormation:
    def test_single_bird(self, geometry):
        s = make_v_formation(1, geometry)
        assert s.bird_count == 1
        assert np.array_equal(s.positions, [[0, 0]])

    def test_all_velocities_equal_leader(self, geometry):
        s = make_v_formation(7, geometry)
        assert np.array_equal(s.velocities, np.tile(geometry.leader_velocity, (7, 1)))

    def test_wing_lengths_split(self):
        assert wing_lengths(7) == (3, 3)
        assert wing_lengths(6) == (2, 3)
        assert wing_lengths(2) == (0, 1)

    def test_leader_sits_between_wings(self, geometry):
        s = make_v_formation(7, geometry)
        assert np.array_equal(s.positions[3], [0, 0])
        # wing depths shrink toward the leader, then grow back out
        depths = np.linalg.norm(s.positions, axis=1)
        assert list(depths[:4]) == sorted(depths[:4], reverse=True)
        assert list(depths[3:]) == sorted(depths[3:])

    def test_rejects_empty_flock(self):
        with pytest.raises(ValueError):
            make_v_formation(0)

    @pytest.mark.parametrize("b", range(2, 10))
    def test_tip_removal_matches_smaller_formation(self, b, geometry):
        # Dropping the tip of the deeper wing reproduces the next-smaller
        # formation; pairwise offsets make the check translation-proof.
        s = make_v_formation(b, geometry)
        tip = 0 if b % 2 else b - 1
        remnant = remove_birds(s, {tip})
        target = make_v_formation(b - 1, geometry)
        offs_r = remnant.positions[None] - remnant.positions[:, None]
        offs_t = target.positions[None] - target.positions[:, None]
        assert np.allclose(offs_r, offs_t, atol=1e-12)
        assert np.array_equal(remnant.velocities, target.velocities)


class TestSampleRandomState:
    def test_deterministic_under_seed(self):
        a = sample_random_state(7, rng=np.random.default_rng(5))
        b = sample_random_state(7, rng=np.random.default_rng(5))
        assert a == b

    def test_different_seeds_differ(self):
        a = sample_random_state(7, rng=np.random.default_rng(5))
        b = sample_random_state(7, rng=np.random.default_rng(6))
        assert a != b

    def test_box_and_speed_containment(self):
        s = sample_random_state(
            50, ((0, 3), (1, 2)), (0.5, 1.5), np.random.default_rng(0)
        )
        assert np.all(s.positions[:, 0] >= 0) and np.all(s.positions[:, 0] <= 3)
        assert np.all(s.positions[:, 1] >= 1) and np.all(s.positions[:, 1] <= 2)
        speeds = np.linalg.norm(s.velocities, axis=1)
        assert np.all(speeds >= 0.5) and np.all(speeds <= 1.5)

    def test_empty_interval_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            sample_random_state(3, ((1, 1), (0, 1)), (0.5, 1.0), np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_random_state(3, ((0, 1), (0, 1)), (1.0, 0.5), np.random.default_rng(0))


class TestRemoveBirds:
    def test_empty_removal_is_identity(self, geometry):
        s = make_v_formation(5, geometry)
        assert remove_birds(s, set()) == s

    def test_keeps_order_and_values(self, rng):
        s = state_of(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
        out = remove_birds(s, {1, 3})
        assert np.array_equal(out.positions, s.positions[[0, 2, 4]])
        assert np.array_equal(out.velocities, s.velocities[[0, 2, 4]])

    def test_out_of_range_rejected(self, geometry):
        s = make_v_formation(3, geometry)
        with pytest.raises(ValueError, match="out of range"):
            remove_birds(s, {3})

    def test_removing_all_rejected(self, geometry):
        s = make_v_formation(2, geometry)
        with pytest.raises(ValueError, match="every bird"):
            remove_birds(s, {0, 1})

    def test_duplicates_rejected(self, geometry):
        s = make_v_formation(4, geometry)
        with pytest.raises(ValueError, match="duplicates"):
            remove_birds(s, [1, 1])
