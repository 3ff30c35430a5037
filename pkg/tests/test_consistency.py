import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amfst.consistency import (
    INVALID,
    FrameRecord,
    build_candidate_grid,
    forward_backward_epe,
    mask_contains,
    occlusion_condition,
)
from amfst.errors import ContractViolation, InvalidInputError
from amfst.flow_backend import FlowQueryResult, FrameFeatures, as_points, in_bounds

from conftest import make_scene, oracle_features


class OffsetBackend:
    """Forward flow adds (2, 0); backward flow undoes it and then adds (3, 4)."""

    name = "offset"

    def extract_features(self, image, frame_id):
        return FrameFeatures(frame_id, None, 100, 100, self.name)

    def estimate_flow(self, src, dst, queries):
        q = as_points(queries)
        out = q + [2.0, 0.0] if src.frame_id < dst.frame_id else q - [2.0, 0.0] + [3.0, 4.0]
        return FlowQueryResult(out, in_bounds(q, 100, 100))


class FixedBackend:
    """Every forward query lands on a preset prediction; backward flow returns to the anchor plus ``drift``."""

    name = "fixed"

    def __init__(self, predictions, drift=(0.0, 0.0)):
        self.predictions = as_points(predictions)
        self.drift = np.asarray(drift, dtype=np.float64)

    def extract_features(self, image, frame_id):
        return FrameFeatures(frame_id, None, 100, 60, self.name)

    def estimate_flow(self, src, dst, queries):
        q = as_points(queries)
        if src.frame_id < dst.frame_id:
            self.anchors = q.copy()
            return FlowQueryResult(self.predictions.copy(), np.ones(len(q), dtype=bool))
        return FlowQueryResult(self.anchors + self.drift, np.ones(len(q), dtype=bool))


def _record(backend, fid, anchors, valid=None):
    anchors = as_points(anchors)
    valid = np.ones(len(anchors), dtype=bool) if valid is None else valid
    return FrameRecord(fid, backend.extract_features(None, fid), anchors, valid)


def test_exact_oracle_epe_is_zero():
    _, gt, scene = make_scene(width=128, height=128, frame_count=8, point_count=30, amplitude=3.0,
                              translation=(0.5, 0.2), temporal_frequency=0.05, margin=20)
    backend, feats = oracle_features(scene)
    for ref_t in (0, 3, 6):
        rec = FrameRecord(ref_t, feats[ref_t], gt.positions[ref_t], np.ones(30, dtype=bool))
        pred, epe = forward_backward_epe(rec, feats[7], backend)
        assert np.all(epe <= 1e-9)
        np.testing.assert_allclose(pred, gt.positions[7], atol=1e-9)


def test_offset_backward_flow_gives_epe_five():
    b = OffsetBackend()
    rec = _record(b, 0, [[10, 10], [50, 20], [70, 70]])
    pred, epe = forward_backward_epe(rec, b.extract_features(None, 1), b)
    np.testing.assert_allclose(epe, 5.0)
    np.testing.assert_allclose(pred, rec.anchors + [2.0, 0.0])


def test_noisy_oracle_mean_epe_matches_simulation():
    _, gt, scene = make_scene(width=512, height=512, frame_count=2, point_count=1000, margin=20)
    backend, feats = oracle_features(scene, sigma=0.5, seed=0)
    rec = FrameRecord(0, feats[0], gt.positions[0], np.ones(1000, dtype=bool))
    _, epe = forward_backward_epe(rec, feats[1], backend)
    # independent oracle: the round trip accumulates two isotropic N(0, sigma^2) errors
    sim = np.random.default_rng(12345).normal(0.0, 0.5, size=(2, 200_000, 2)).sum(axis=0)
    expected = np.hypot(*sim.T).mean()
    # the expected mean (about 0.886) sits close to the 0.9 bound, so this seed is fixed
    assert 0.4 <= epe.mean() <= 0.9
    assert abs(epe.mean() - expected) < 0.05 * expected


def test_frozen_anchor_is_invalid_and_kept():
    b = OffsetBackend()
    rec = _record(b, 0, [[10, 10], [20, 20]], np.array([True, False]))
    pred, epe = forward_backward_epe(rec, b.extract_features(None, 1), b)
    assert epe[1] == INVALID
    np.testing.assert_array_equal(pred[1], [20.0, 20.0])
    assert np.isfinite(epe[0])


def test_invalid_flow_gives_invalid_epe():
    b = OffsetBackend()
    rec = _record(b, 0, [[-3.0, 10], [10, 10]])  # the first anchor lies off the frame
    pred, epe = forward_backward_epe(rec, b.extract_features(None, 1), b)
    assert epe[0] == INVALID and np.isfinite(epe[1])
    np.testing.assert_array_equal(pred[0], [-3.0, 10.0])


def test_anchor_count_mismatch_is_contract_violation():
    b = OffsetBackend()
    rec = _record(b, 0, [[10, 10], [20, 20]])
    with pytest.raises(ContractViolation):
        forward_backward_epe(rec, b.extract_features(None, 1), b, n_points=3)
    with pytest.raises(ContractViolation):
        FrameRecord(0, rec.features, rec.anchors, np.ones(3, dtype=bool))


def test_grid_exact_oracle_no_mask():
    _, gt, scene = make_scene(width=128, height=128, frame_count=5, point_count=2, translation=(1, 1), margin=20)
    backend, feats = oracle_features(scene)
    frames = [FrameRecord(t, feats[t], gt.positions[t], np.ones(2, dtype=bool)) for t in range(3)]
    grid = build_candidate_grid(frames, feats[4], None, backend)
    assert grid.shape == (3, 2)
    assert np.all(grid.epe <= 1e-9)
    assert not grid.mask_occluded.any()
    assert grid.frame_ids == [0, 1, 2]


def test_grid_mask_containment():
    b = FixedBackend([[10.0, 30.0], [70.0, 30.0]])
    mask = np.zeros((60, 100), dtype=bool)
    mask[:, :50] = True
    rec = _record(b, 0, [[12.0, 30.0], [72.0, 30.0]])
    grid = build_candidate_grid([rec], b.extract_features(None, 1), mask, b)
    assert grid.mask_occluded.tolist() == [[True, False]]


def test_grid_out_of_bounds_prediction_is_mask_occluded():
    b = FixedBackend([[-2.0, 10.0], [5.0, 10.0]])
    rec = _record(b, 0, [[1.0, 10.0], [5.0, 10.0]])
    grid = build_candidate_grid([rec], b.extract_features(None, 1), None, b)
    assert grid.mask_occluded.tolist() == [[True, False]]


def test_grid_needs_frames_and_matching_mask():
    b = OffsetBackend()
    with pytest.raises(InvalidInputError):
        build_candidate_grid([], b.extract_features(None, 1), None, b)
    rec = _record(b, 0, [[10, 10]])
    with pytest.raises(ContractViolation):
        build_candidate_grid([rec], b.extract_features(None, 1), np.zeros((5, 5)), b)


def test_grid_rows_permute_with_frames():
    _, gt, scene = make_scene(width=128, height=128, frame_count=6, point_count=10, margin=20,
                              translation=(0.5, 0.0))
    backend, feats = oracle_features(scene, sigma=0.7, seed=1)
    frames = [FrameRecord(t, feats[t], gt.positions[t], np.ones(10, dtype=bool)) for t in (0, 2, 4)]
    a = build_candidate_grid(frames, feats[5], None, backend)
    b = build_candidate_grid(frames[::-1], feats[5], None, backend)
    np.testing.assert_array_equal(a.epe, b.epe[::-1])
    np.testing.assert_array_equal(a.predictions, b.predictions[::-1])


def test_mask_depends_on_predictions_only():
    mask = np.zeros((60, 100), dtype=bool)
    mask[20:40, 20:40] = True
    preds = [[25.0, 25.0], [5.0, 5.0]]
    b1, b2 = FixedBackend(preds), FixedBackend(preds, drift=(6.0, 8.0))
    r1 = _record(b1, 0, [[25.0, 25.0], [5.0, 5.0]])
    r2 = _record(b2, 0, [[25.0, 25.0], [5.0, 5.0]])
    g1 = build_candidate_grid([r1], b1.extract_features(None, 1), mask, b1)
    g2 = build_candidate_grid([r2], b2.extract_features(None, 1), mask, b2)
    assert not np.array_equal(g1.epe, g2.epe)
    np.testing.assert_array_equal(g1.mask_occluded, g2.mask_occluded)


def test_mask_contains_nearest_pixel():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 2] = True
    pts = np.array([[2.4, 1.4], [1.6, 0.6], [2.5, 1.0], [1.49, 1.0], [np.nan, 1.0], [9.0, 1.0]])
    assert mask_contains(mask, pts).tolist() == [True, True, False, False, False, False]
    assert not mask_contains(None, pts).any()


# -- occlusion condition ------------------------------------------------------------


def test_occlusion_condition_examples():
    no_mask = np.zeros((2, 1), dtype=bool)
    assert occlusion_condition([[0.5], [3.0]], no_mask, 2.0).tolist() == [False]
    assert occlusion_condition([[0.0], [0.0]], np.ones((2, 1), dtype=bool), 2.0).tolist() == [True]
    assert occlusion_condition([[2.5], [4.1]], no_mask, 2.0).tolist() == [True]


def test_occlusion_condition_invalid_and_masked_entries_are_unusable():
    epe = np.array([[INVALID, 0.1, 0.1], [INVALID, 5.0, INVALID]])
    masked = np.array([[False, True, False], [False, False, False]])
    # col 0: nothing usable; col 1: the good row is masked; col 2: usable 0.1
    assert occlusion_condition(epe, masked, 2.0).tolist() == [True, True, False]


def test_occlusion_condition_rejects_misaligned():
    with pytest.raises(ContractViolation):
        occlusion_condition(np.zeros((2, 3)), np.zeros((3, 2), dtype=bool), 1.0)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 6).flatmap(lambda f: st.integers(1, 8).flatmap(lambda n: st.tuples(
        st.lists(st.floats(0, 10), min_size=f * n, max_size=f * n),
        st.lists(st.booleans(), min_size=f * n, max_size=f * n),
        st.just((f, n)),
    ))),
    st.floats(0.01, 10), st.floats(0.01, 10),
)
def test_occlusion_count_monotone_in_tau(data, tau_a, tau_b):
    values, flags, shape = data
    epe = np.asarray(values).reshape(shape)
    masked = np.asarray(flags).reshape(shape)
    lo, hi = sorted((tau_a, tau_b))
    occ_lo = occlusion_condition(epe, masked, lo)
    occ_hi = occlusion_condition(epe, masked, hi)
    assert np.all(occ_hi <= occ_lo)
