import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egoflow.trajectory import (
    NormRecord,
    ObservedHistory,
    SceneTrack,
    deinterleave,
    denormalize_values,
    from_displacements,
    interleave,
    normalize,
    normalize_values,
    to_displacements,
)


def make_history(values, mask, ego_index=None):
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if ego_index is None:
        ego_index = values.shape[0] - 1
    return ObservedHistory(values=values, mask=mask, ego_index=ego_index)


class TestTypes:
    def test_track_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            SceneTrack(0, np.zeros((0, 2)), 0, 0.4)
        with pytest.raises(ValueError):
            SceneTrack(0, np.zeros((3, 3)), 0, 0.4)
        with pytest.raises(ValueError):
            SceneTrack(0, np.full((3, 2), np.nan), 0, 0.4)
        with pytest.raises(ValueError):
            SceneTrack(0, np.zeros((3, 2)), 0, 0.0)

    def test_history_shape_contract(self):
        # values must have exactly twice the mask's columns
        with pytest.raises(ValueError):
            make_history(np.zeros((2, 6)), np.ones((2, 4)))
        h = make_history(np.zeros((2, 8)), np.ones((2, 4)))
        assert h.values.shape[1] == 2 * h.mask.shape[1]

    def test_history_requires_visible_ego(self):
        mask = np.ones((2, 4))
        mask[1, 2] = 0
        with pytest.raises(ValueError):
            make_history(np.zeros((2, 8)), mask)

    def test_history_rejects_nan_values(self):
        values = np.zeros((2, 8))
        values[0, 3] = np.nan
        with pytest.raises(ValueError):
            make_history(values, np.ones((2, 4)))

    def test_norm_record_requires_positive_scale(self):
        with pytest.raises(ValueError):
            NormRecord(origin=(0.0, 0.0), scale=0.0)
        with pytest.raises(ValueError):
            NormRecord(origin=(np.inf, 0.0), scale=1.0)


class TestNormalize:
    def test_identity_map(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(3, 8))
        values[2, -2:] = 0.0  # ego ends at the origin
        h = make_history(values, np.ones((3, 4)))
        past = rng.normal(size=(3, 8))
        future = rng.normal(size=(3, 12))
        normed, past_n, future_n, norm = normalize(h, past, future, scale=1.0)
        assert norm.origin == (0.0, 0.0) and norm.scale == 1.0
        np.testing.assert_array_equal(normed.values, h.values)
        np.testing.assert_array_equal(past_n, past)
        np.testing.assert_array_equal(future_n, future)

    def test_forced_affine_map(self):
        # ego last step (3, 4), scale 2: that point -> (0, 0), (5, 4) -> (1, 0)
        values = np.array([[5.0, 4.0, 5.0, 4.0], [1.0, 1.0, 3.0, 4.0]])
        h = make_history(values, np.ones((2, 2)))
        normed, _, _, norm = normalize(h, values.copy(), values.copy(), scale=2.0)
        assert norm.origin == (3.0, 4.0)
        np.testing.assert_allclose(normed.values[1, 2:], [0.0, 0.0])
        np.testing.assert_allclose(normed.values[0, :2], [1.0, 0.0])

    def test_round_trip_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = rng.integers(1, 6)
            values = rng.normal(scale=10.0, size=(a, 16))
            h = make_history(values, np.ones((a, 8)))
            past = rng.normal(scale=10.0, size=(a, 16))
            future = rng.normal(scale=10.0, size=(a, 24))
            scale = float(rng.uniform(0.1, 9.0))
            normed, past_n, future_n, norm = normalize(h, past, future, scale)
            for before, after in (
                (h.values, normed.values),
                (past, past_n),
                (future, future_n),
            ):
                back = denormalize_values(after, norm)
                assert np.max(np.abs(back - before)) < 1e-12

    def test_rejects_non_finite_ego_anchor(self):
        values = np.zeros((1, 4))
        h = make_history(values, np.ones((1, 2)))
        object.__setattr__(h, "values", np.array([[0.0, 0.0, np.inf, 0.0]]))
        with pytest.raises(ValueError):
            normalize(h, np.zeros((1, 4)), np.zeros((1, 4)), 1.0)

    def test_masked_entries_transform_identically(self):
        values = np.arange(8.0).reshape(1, 8)
        mask = np.array([[1.0, 1.0, 1.0, 1.0]])
        h = make_history(values, mask)
        normed, _, _, norm = normalize(h, values.copy(), values.copy(), 2.0)
        np.testing.assert_array_equal(
            normed.values, normalize_values(values, norm)
        )


class TestDisplacements:
    def test_constant_position_is_zero(self):
        absolute = np.tile([2.0, 3.0], (1, 5))
        rel = to_displacements(absolute, reference=np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(rel, np.zeros((1, 10)))

    def test_arithmetic_differences(self):
        absolute = interleave(np.array([[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]]))
        rel = to_displacements(absolute, reference=np.array([[0.0, 0.0]]))
        expected = interleave(np.array([[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]]))
        np.testing.assert_array_equal(rel, expected)

    def test_running_sum(self):
        rel = interleave(np.array([[[1.0, 0.0], [1.0, 0.0]]]))
        absolute = from_displacements(rel, reference=np.array([[0.0, 0.0]]))
        np.testing.assert_array_equal(
            absolute, interleave(np.array([[[1.0, 0.0], [2.0, 0.0]]]))
        )

    def test_zero_rel_holds_reference(self):
        absolute = from_displacements(np.zeros((1, 8)), reference=np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(absolute, np.tile([2.0, 3.0], (1, 4)))

    def test_round_trip_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            a, t = rng.integers(1, 5), rng.integers(1, 9)
            walk = np.cumsum(rng.normal(size=(a, t, 2)), axis=1)
            ref = rng.normal(size=(a, 2))
            absolute = interleave(walk)
            back = from_displacements(to_displacements(absolute, ref), ref)
            assert np.max(np.abs(back - absolute)) < 1e-10

    @given(
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=1, max_value=10),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, agents, steps, seed):
        rng = np.random.default_rng(seed)
        absolute = interleave(rng.normal(scale=5.0, size=(agents, steps, 2)))
        ref = rng.normal(size=(agents, 2))
        back = from_displacements(to_displacements(absolute, ref), ref)
        assert np.max(np.abs(back - absolute)) < 1e-10


def test_interleave_round_trip():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(4, 6, 2))
    np.testing.assert_array_equal(deinterleave(interleave(pts)), pts)
    with pytest.raises(ValueError):
        deinterleave(np.zeros((2, 5)))
