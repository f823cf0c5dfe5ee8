"""Memory banks: aggregation, greedy coreset, exact NN scoring, MBNK1 files."""

import itertools
import json

import numpy as np
import pytest

from mvpad import (
    AnomalyMap2D,
    DimensionMismatchError,
    ExtractorMismatchError,
    FeatureGrid,
    HeaderFormatError,
    InvalidArgumentError,
    MemoryBank,
    PayloadSizeError,
    ProjectionType,
    aggregate_bank,
    anomaly_map,
    bank_filename,
    build_bank,
    bulk_nn_distance,
    coreset_size,
    greedy_coreset,
    load_bank,
    nn_distance,
    save_bank,
)

PT = ProjectionType.RIGHT_AXIAL


def make_grid(features, ptype=PT, extractor_hash="test-hash", patch_size=3, stride=2, canvas=None):
    features = np.asarray(features, dtype=np.float32)
    if canvas is None:
        gh, gw = features.shape[:2]
        canvas = ((gh - 1) * stride + patch_size, (gw - 1) * stride + patch_size)
    return FeatureGrid(
        ptype=ptype,
        features=features,
        extractor_hash=extractor_hash,
        patch_size=patch_size,
        stride=stride,
        canvas=canvas,
    )


def make_bank(entries, ptype=PT, extractor_hash="test-hash", coreset_frac=1.0, source_count=None):
    entries = np.asarray(entries, dtype=np.float32)
    return MemoryBank(
        ptype=ptype,
        entries=entries,
        extractor_hash=extractor_hash,
        coreset_frac=coreset_frac,
        source_count=source_count if source_count is not None else entries.shape[0],
    )


class TestAggregate:
    def test_single_grid_counts_locations(self):
        grid = make_grid(np.arange(12, dtype=np.float32).reshape(2, 2, 3))
        raw = aggregate_bank([grid])
        assert raw.shape == (4, 3)
        np.testing.assert_array_equal(raw, grid.flat())

    def test_duplicate_grids_are_retained(self):
        grid = make_grid(np.ones((2, 2, 3), dtype=np.float32))
        raw = aggregate_bank([grid, grid])
        assert raw.shape == (8, 3)

    def test_mixed_extractor_hash_rejected(self):
        a = make_grid(np.zeros((1, 1, 3)), extractor_hash="one")
        b = make_grid(np.zeros((1, 1, 3)), extractor_hash="two")
        with pytest.raises(ExtractorMismatchError):
            aggregate_bank([a, b])

    def test_mixed_ptype_rejected(self):
        a = make_grid(np.zeros((1, 1, 3)), ptype=ProjectionType.RIGHT_AXIAL)
        b = make_grid(np.zeros((1, 1, 3)), ptype=ProjectionType.LEFT_AXIAL)
        with pytest.raises(ExtractorMismatchError):
            aggregate_bank([a, b])

    def test_mixed_feature_dim_rejected(self):
        a = make_grid(np.zeros((1, 1, 3)))
        b = make_grid(np.zeros((1, 1, 4)))
        with pytest.raises(DimensionMismatchError):
            aggregate_bank([a, b])

    def test_empty_list_rejected(self):
        with pytest.raises(InvalidArgumentError):
            aggregate_bank([])


class TestGreedyCoreset:
    def test_hand_traced_one_dimensional_example(self):
        # mean of {0, 1, 10} is ~3.67, so 10 is picked first, then 0
        pts = np.array([[0.0], [1.0], [10.0]])
        np.testing.assert_array_equal(greedy_coreset(pts, 2), [2, 0])

    def test_full_size_returns_every_index(self):
        pts = np.random.default_rng(61).random((7, 3))
        assert set(greedy_coreset(pts, 7).tolist()) == set(range(7))

    def test_ties_break_to_lowest_index(self):
        pts = np.array([[0.0], [0.0], [10.0], [10.0]])
        np.testing.assert_array_equal(greedy_coreset(pts, 3), [0, 2, 1])

    def test_out_of_range_size_rejected(self):
        pts = np.zeros((3, 2))
        with pytest.raises(InvalidArgumentError):
            greedy_coreset(pts, 0)
        with pytest.raises(InvalidArgumentError):
            greedy_coreset(pts, 4)

    def test_deterministic_across_calls(self):
        pts = np.random.default_rng(62).random((50, 8), dtype=np.float32)
        np.testing.assert_array_equal(greedy_coreset(pts, 10), greedy_coreset(pts, 10))

    @staticmethod
    def covering_radius(pts, chosen):
        d = np.linalg.norm(pts[:, None, :] - pts[None, chosen, :], axis=2)
        return float(d.min(axis=1).max())

    def test_within_twice_exhaustive_optimum(self):
        rng = np.random.default_rng(63)
        for _ in range(20):
            n = int(rng.integers(4, 9))
            c = int(rng.integers(1, 4))
            pts = rng.random((n, 2))
            greedy = self.covering_radius(pts, np.asarray(greedy_coreset(pts, c)))
            optimal = min(
                self.covering_radius(pts, np.asarray(sub))
                for sub in itertools.combinations(range(n), c)
            )
            assert greedy <= 2.0 * optimal + 1e-9

    def test_coreset_size_rule(self):
        assert coreset_size(100, 0.1) == 10
        assert coreset_size(5, 0.001) == 1
        assert coreset_size(10, 1.0) == 10
        assert coreset_size(3, 0.9) == 3


class TestBankBuild:
    def test_frac_one_keeps_every_feature_in_order(self):
        grid = make_grid(np.random.default_rng(64).random((3, 2, 4), dtype=np.float32))
        bank = build_bank([grid], coreset_frac=1.0)
        np.testing.assert_array_equal(bank.entries, grid.flat())
        assert bank.source_count == 6
        assert bank.count == 6

    def test_subsampled_bank_rows_come_from_the_raw_set(self):
        rng = np.random.default_rng(65)
        grid = make_grid(rng.random((4, 5, 3), dtype=np.float32))
        bank = build_bank([grid], coreset_frac=0.5)
        assert bank.count == 10
        assert bank.source_count == 20
        raw_rows = {tuple(r) for r in grid.flat().tolist()}
        assert all(tuple(r) in raw_rows for r in bank.entries.tolist())

    def test_invalid_frac_rejected(self):
        grid = make_grid(np.zeros((1, 1, 2)))
        with pytest.raises(InvalidArgumentError):
            build_bank([grid], coreset_frac=0.0)
        with pytest.raises(InvalidArgumentError):
            build_bank([grid], coreset_frac=1.5)

    def test_bank_validation(self):
        with pytest.raises(InvalidArgumentError):
            make_bank(np.zeros((0, 3)))
        with pytest.raises(InvalidArgumentError):
            make_bank(np.full((2, 3), np.nan))
        with pytest.raises(InvalidArgumentError):
            make_bank(np.zeros((4, 3)), source_count=2)


class TestNNDistance:
    def test_query_equal_to_entry_is_zero(self):
        bank = make_bank([[1.0, 2.0], [3.0, 4.0]])
        d, idx = nn_distance([3.0, 4.0], bank)
        assert d == 0.0 and idx == 1

    def test_two_candidate_hand_check(self):
        bank = make_bank([[0.0, 0.0], [1.0, 0.0]])
        d, idx = nn_distance([0.4, 0.0], bank)
        assert d == pytest.approx(0.4)
        assert idx == 0

    def test_tie_goes_to_lowest_index(self):
        bank = make_bank([[0.0], [2.0]])
        d, idx = nn_distance([1.0], bank)
        assert d == 1.0 and idx == 0

    def test_dim_mismatch_rejected(self):
        bank = make_bank([[0.0, 0.0]])
        with pytest.raises(DimensionMismatchError):
            nn_distance([1.0], bank)

    def test_matches_exhaustive_scan_exactly(self):
        rng = np.random.default_rng(66)
        for _ in range(30):
            entries = rng.random((int(rng.integers(1, 40)), 6)).astype(np.float32)
            bank = make_bank(entries)
            query = rng.random(6)
            d, idx = nn_distance(query, bank)
            # independent scan: same elementwise reduction per entry, python argmin
            best_d2, best_i = None, None
            for i in range(entries.shape[0]):
                diff = entries[i].astype(np.float64) - np.asarray(query, dtype=np.float64)
                d2 = float((diff * diff).sum())
                if best_d2 is None or d2 < best_d2:
                    best_d2, best_i = d2, i
            assert idx == best_i
            assert d == float(np.sqrt(best_d2))


class TestBulkNN:
    def test_matches_single_query_path_bitwise(self):
        rng = np.random.default_rng(67)
        entries = rng.random((300, 20), dtype=np.float32)
        entries[17] = entries[3]  # exact duplicate: tie must go to index 3
        queries = rng.random((600, 20)).astype(np.float32).astype(np.float64)
        queries[5] = entries[3]
        bank = make_bank(entries)
        d2, idx = bulk_nn_distance(queries, entries.astype(np.float32))
        for row in range(queries.shape[0]):
            d_ref, i_ref = nn_distance(queries[row], bank)
            assert idx[row] == i_ref
            assert float(np.sqrt(d2[row])) == d_ref
        assert d2[5] == 0.0 and idx[5] == 3

    def test_huge_values_fall_back_to_full_scan(self):
        entries = np.array([[1e25, 0.0], [0.0, 1e25]], dtype=np.float64)
        queries = np.array([[1e25, 1.0]], dtype=np.float64)
        d2, idx = bulk_nn_distance(queries, entries)
        assert idx[0] == 0
        assert d2[0] == 1.0

    def test_shrinking_the_bank_never_lowers_distances(self):
        rng = np.random.default_rng(68)
        entries = rng.random((80, 10))
        queries = rng.random((40, 10))
        d_full, _ = bulk_nn_distance(queries, entries)
        d_sub, _ = bulk_nn_distance(queries, entries[:20])
        assert np.all(d_sub >= d_full)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            bulk_nn_distance(np.zeros((2, 3)), np.zeros((2, 4)))


class TestAnomalyMap:
    def test_training_features_score_zero(self):
        rng = np.random.default_rng(69)
        grid = make_grid(rng.random((3, 3, 4), dtype=np.float32))
        bank = build_bank([grid], coreset_frac=1.0)
        amap = anomaly_map(grid, bank, smoothing_sigma=0.0)
        assert amap.score == 0.0
        assert not amap.pixels.any()

    def test_single_location_paints_constant_distance(self):
        grid = make_grid(np.array([[[1.0, 0.0]]], dtype=np.float32), patch_size=9, stride=4, canvas=(9, 9))
        bank = make_bank([[0.0, 0.0]])
        amap = anomaly_map(grid, bank, smoothing_sigma=0.0)
        np.testing.assert_array_equal(amap.pixels, np.ones((9, 9), dtype=np.float32))
        assert amap.score == 1.0

    def test_unsmoothed_score_is_max_of_distance_grid(self):
        rng = np.random.default_rng(70)
        grid = make_grid(rng.random((4, 5, 3), dtype=np.float32))
        bank = make_bank(rng.random((12, 3), dtype=np.float32))
        amap = anomaly_map(grid, bank, smoothing_sigma=0.0)
        per_loc = [nn_distance(vec, bank)[0] for vec in grid.flat()]
        assert amap.score == pytest.approx(max(per_loc), rel=1e-6)

    def test_map_invariant_to_bank_entry_order(self):
        rng = np.random.default_rng(71)
        grid = make_grid(rng.random((3, 3, 4), dtype=np.float32))
        entries = rng.random((10, 4), dtype=np.float32)
        a = anomaly_map(grid, make_bank(entries))
        b = anomaly_map(grid, make_bank(entries[::-1].copy()))
        np.testing.assert_array_equal(a.pixels, b.pixels)
        assert a.score == b.score

    def test_smoothing_never_raises_the_max(self):
        rng = np.random.default_rng(72)
        grid = make_grid(rng.random((4, 4, 3), dtype=np.float32))
        bank = make_bank(rng.random((8, 3), dtype=np.float32))
        sharp = anomaly_map(grid, bank, smoothing_sigma=0.0)
        smooth = anomaly_map(grid, bank, smoothing_sigma=2.0)
        assert smooth.score <= sharp.score + 1e-6

    def test_mismatches_rejected(self):
        grid = make_grid(np.zeros((2, 2, 3)))
        with pytest.raises(ExtractorMismatchError):
            anomaly_map(grid, make_bank(np.zeros((2, 3)), ptype=ProjectionType.LEFT_CORONAL))
        with pytest.raises(ExtractorMismatchError):
            anomaly_map(grid, make_bank(np.zeros((2, 3)), extractor_hash="other"))
        with pytest.raises(DimensionMismatchError):
            anomaly_map(grid, make_bank(np.zeros((2, 5))))
        with pytest.raises(InvalidArgumentError):
            anomaly_map(grid, make_bank(np.zeros((2, 3))), smoothing_sigma=-1.0)

    def test_map_type_validates_score_and_sign(self):
        with pytest.raises(InvalidArgumentError):
            AnomalyMap2D(ptype=PT, pixels=np.ones((2, 2), dtype=np.float32), score=0.5)
        with pytest.raises(InvalidArgumentError):
            AnomalyMap2D(ptype=PT, pixels=np.full((2, 2), -1.0, dtype=np.float32), score=-1.0)


class TestBankFiles:
    def bank(self):
        rng = np.random.default_rng(73)
        return make_bank(rng.random((6, 4), dtype=np.float32), coreset_frac=0.25, source_count=24)

    def test_round_trip_bit_exact(self, tmp_path):
        bank = self.bank()
        path = tmp_path / bank_filename(bank.ptype)
        save_bank(bank, path)
        back = load_bank(path)
        np.testing.assert_array_equal(back.entries, bank.entries)
        assert back.ptype == bank.ptype
        assert back.extractor_hash == bank.extractor_hash
        assert back.coreset_frac == bank.coreset_frac
        # a re-save reproduces the file byte for byte
        path2 = tmp_path / "again.mbnk"
        save_bank(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_layout(self, tmp_path):
        path = tmp_path / "b.mbnk"
        save_bank(self.bank(), path)
        raw = path.read_bytes()
        header = json.loads(raw[: raw.find(b"\n")])
        assert list(header) == ["magic", "projection", "feature_dim", "count", "extractor_hash", "coreset_frac"]
        assert header["magic"] == "MBNK1"
        assert header["projection"] == "right_axial"
        assert header["count"] == 6 and header["feature_dim"] == 4

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "b.mbnk"
        save_bank(self.bank(), path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(PayloadSizeError):
            load_bank(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "b.mbnk"
        path.write_bytes(b'{"magic":"MVOL1"}\n')
        with pytest.raises(HeaderFormatError):
            load_bank(path)

    def test_bank_filename_convention(self):
        assert bank_filename(ProjectionType.LEFT_SAGITTAL) == "bank_left_sagittal.mbnk"
