import numpy as np
import pytest

from satpoint import (ADAPTIVE_RATIO, EMPTY_MAP_THRESHOLD, Detection,
                      DetectionSet, decode_location_map, fidt_map)
from satpoint.fidt import PointSet

from oracles import lmds_reference

try:
    from hypothesis import given, settings
    from hypothesis import strategies as st
    from hypothesis.extra import numpy as hnp
    HAVE_HYPOTHESIS = True
except ImportError:
    HAVE_HYPOTHESIS = False


def decode_coords(values):
    return {(d.row, d.col) for d in decode_location_map(values)}


class TestEmptyRule:
    def test_all_below_threshold_decodes_empty(self):
        m = np.full((8, 8), 0.0999)
        assert len(decode_location_map(m)) == 0

    def test_threshold_is_strict_less_than(self):
        m = np.zeros((5, 5))
        m[2, 2] = EMPTY_MAP_THRESHOLD
        dets = decode_location_map(m)
        assert {(d.row, d.col) for d in dets} == {(2, 2)}

    def test_structure_is_ignored_when_empty(self):
        m = np.zeros((6, 6))
        m[1, 1] = 0.09
        m[4, 4] = 0.05
        assert len(decode_location_map(m)) == 0


class TestAdaptiveThreshold:
    def test_minor_peak_below_delta_is_dropped(self):
        m = np.zeros((9, 9))
        m[2, 2] = 1.0
        m[6, 6] = 0.39  # just below 100/255 = 0.392...
        assert decode_coords(m) == {(2, 2)}

    def test_minor_peak_at_delta_is_kept(self):
        m = np.zeros((9, 9))
        m[2, 2] = 1.0
        m[6, 6] = ADAPTIVE_RATIO
        assert decode_coords(m) == {(2, 2), (6, 6)}

    def test_scaling_map_by_power_of_two_preserves_detections(self):
        rng = np.random.default_rng(5)
        m = rng.uniform(0.2, 1.0, size=(16, 16))
        base = decode_coords(m)
        assert base == decode_coords(m * 4.0)
        assert base == decode_coords(m * 0.25 + 0.0)


class TestLocalMaxima:
    def test_single_peak(self):
        ps = PointSet([(7.0, 9.0)], height=16, width=16)
        dets = decode_location_map(fidt_map(ps).values)
        assert [(d.row, d.col) for d in dets] == [(7, 9)]
        assert dets.detections[0].score == 1.0

    def test_plateau_keeps_all_tied_pixels(self):
        m = np.zeros((7, 7))
        m[3, 3] = m[3, 4] = 0.8
        assert decode_coords(m) == {(3, 3), (3, 4)}

    def test_corner_peak_with_replicated_border(self):
        m = np.zeros((6, 6))
        m[0, 0] = 0.7
        m[0, 1] = 0.5
        assert decode_coords(m) == {(0, 0)}

    def test_strictly_larger_neighbor_suppresses(self):
        m = np.zeros((5, 5))
        m[2, 2] = 0.9
        m[2, 3] = 0.899999
        assert decode_coords(m) == {(2, 2)}

    def test_row_major_output_order(self):
        m = np.zeros((8, 8))
        for r, c in [(5, 1), (1, 6), (1, 2), (6, 6)]:
            m[r, c] = 0.9
        order = [(d.row, d.col) for d in decode_location_map(m)]
        assert order == [(1, 2), (1, 6), (5, 1), (6, 6)]

    def test_matches_reference_scan(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            m = rng.uniform(0.0, 1.0, size=(rng.integers(2, 20), rng.integers(2, 20)))
            assert decode_coords(m) == lmds_reference(m)

    def test_matches_reference_on_quantized_maps(self):
        # coarse quantization manufactures plateaus and exact ties
        rng = np.random.default_rng(31)
        for _ in range(20):
            m = np.round(rng.uniform(0.0, 1.0, size=(12, 12)) * 4) / 4
            assert decode_coords(m) == lmds_reference(m)


class TestValidation:
    def test_nan_raises(self):
        m = np.ones((4, 4))
        m[1, 2] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            decode_location_map(m)

    def test_non_2d_raises(self):
        with pytest.raises(ValueError, match="2-d"):
            decode_location_map(np.zeros((3, 3, 3)))
        with pytest.raises(ValueError, match="2-d"):
            decode_location_map(np.zeros(9))


class TestDetectionSetIo:
    def test_payload_round_trip(self, tmp_path):
        dets = DetectionSet([Detection(1, 2, 0.75), Detection(3, 0, 0.5)],
                            height=8, width=9)
        path = tmp_path / "dets.json"
        dets.save(path)
        back = DetectionSet.load(path)
        assert back.height == 8 and back.width == 9
        assert [(d.row, d.col, d.score) for d in back] == [(1, 2, 0.75), (3, 0, 0.5)]

    def test_payload_shape(self):
        payload = DetectionSet([Detection(4, 5, 0.25)], height=6, width=7).to_payload()
        assert payload == {"height": 6, "width": 7, "detections": [[4, 5, 0.25]]}

    def test_coords_dtype_and_shape(self):
        dets = DetectionSet([], height=2, width=2)
        assert dets.coords().shape == (0, 2)
        dets = DetectionSet([Detection(1, 1, 0.9)], height=4, width=4)
        assert dets.coords().dtype == np.float64


if HAVE_HYPOTHESIS:

    @settings(max_examples=60)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2,
                                                   min_side=1, max_side=12),
                      elements=st.floats(0.0, 1.0, width=32)))
    def test_decode_agrees_with_reference_scan(m):
        assert decode_coords(m) == lmds_reference(m)

    @settings(max_examples=40)
    @given(hnp.arrays(np.float64, (8, 8), elements=st.floats(0.0, 1.0, width=32)))
    def test_every_detection_clears_adaptive_threshold(m):
        dets = decode_location_map(m)
        if len(dets) == 0:
            return
        delta = ADAPTIVE_RATIO * float(m.max())
        for d in dets:
            assert d.score >= delta
            assert m[d.row, d.col] == d.score
