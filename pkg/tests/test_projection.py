"""Multi-view projection: plane collapse, HU preparation, crop/resize, symmetry."""

import numpy as np
import pytest

from mvpad import (
    ALL_PROJECTIONS,
    DimensionMismatchError,
    EmptyMaskError,
    InvalidArgumentError,
    LungPair,
    PhantomConfig,
    ProjectionGeometry,
    ProjectionType,
    Volume,
    aip_project,
    crop_resize_to_canvas,
    generate_case,
    mip_project,
    plane_shape,
    prepare_lung_volume,
    project_case,
    project_mask,
    split_left_right,
)


def unit_volume(arr):
    return Volume(np.asarray(arr, dtype=np.float32))


class TestProjectionType:
    def test_exactly_six_in_canonical_order(self):
        assert [p.value for p in ALL_PROJECTIONS] == [
            "right_sagittal",
            "right_coronal",
            "right_axial",
            "left_sagittal",
            "left_coronal",
            "left_axial",
        ]

    def test_plane_to_axis_map(self):
        assert ProjectionType.RIGHT_AXIAL.axis == 0
        assert ProjectionType.LEFT_CORONAL.axis == 1
        assert ProjectionType.RIGHT_SAGITTAL.axis == 2

    def test_plane_shape_drops_collapsed_axis(self):
        dims = (3, 5, 7)
        assert plane_shape(dims, ProjectionType.RIGHT_AXIAL) == (5, 7)
        assert plane_shape(dims, ProjectionType.RIGHT_CORONAL) == (3, 7)
        assert plane_shape(dims, ProjectionType.RIGHT_SAGITTAL) == (3, 5)

    def test_from_string_round_trip_and_rejection(self):
        for p in ALL_PROJECTIONS:
            assert ProjectionType.from_string(p.value) is p
        with pytest.raises(InvalidArgumentError):
            ProjectionType.from_string("upper_oblique")


class TestPrepareLungVolume:
    def test_examples(self):
        ct = Volume(np.array([[[40, -400, -900]]], dtype=np.int16))
        lung = Volume(np.array([[[0, 1, 1]]], dtype=np.uint8))
        out = prepare_lung_volume(ct, lung)
        # outside lung -> 0; -400 -> midpoint; -900 clamps to -800 -> 0
        np.testing.assert_array_equal(out.voxels[0, 0], np.float32([0.0, 0.5, 0.0]))

    def test_dim_mismatch(self):
        ct = Volume(np.zeros((2, 2, 2), dtype=np.int16))
        lung = Volume(np.zeros((2, 2, 3), dtype=np.uint8))
        with pytest.raises(DimensionMismatchError):
            prepare_lung_volume(ct, lung)


class TestPlaneProjections:
    def test_mip_max_of_column(self):
        v = unit_volume(np.array([0.1, 0.9]).reshape(2, 1, 1))
        out = mip_project(v, ProjectionType.RIGHT_AXIAL)
        assert out[0, 0] == np.float32(0.9)

    def test_aip_mean_of_column(self):
        v = unit_volume(np.array([0.1, 0.9]).reshape(2, 1, 1))
        out = aip_project(v, ProjectionType.RIGHT_AXIAL)
        assert out[0, 0] == pytest.approx(0.5, abs=1e-7)

    @pytest.mark.parametrize("ptype", [ProjectionType.RIGHT_SAGITTAL, ProjectionType.RIGHT_CORONAL, ProjectionType.RIGHT_AXIAL])
    def test_constant_volume_projects_to_constant(self, ptype):
        v = unit_volume(np.full((3, 4, 5), 0.25))
        np.testing.assert_array_equal(mip_project(v, ptype), np.full(plane_shape((3, 4, 5), ptype), np.float32(0.25)))
        np.testing.assert_allclose(aip_project(v, ptype), 0.25, atol=1e-7)

    def test_mip_matches_naive_loop_oracle_exactly(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            v = unit_volume(rng.random((4, 4, 4), dtype=np.float32))
            for ptype in (ProjectionType.RIGHT_SAGITTAL, ProjectionType.RIGHT_CORONAL, ProjectionType.RIGHT_AXIAL):
                got = mip_project(v, ptype)
                oh, ow = plane_shape(v.dims, ptype)
                for a in range(oh):
                    for b in range(ow):
                        best = -1.0
                        for k in range(v.dims[ptype.axis]):
                            idx = [a, b]
                            idx.insert(ptype.axis, k)
                            best = max(best, float(v.voxels[tuple(idx)]))
                        assert float(got[a, b]) == best

    def test_aip_matches_naive_loop_oracle_within_1e6(self):
        rng = np.random.default_rng(32)
        for _ in range(10):
            v = unit_volume(rng.random((4, 4, 4), dtype=np.float32))
            for ptype in (ProjectionType.RIGHT_SAGITTAL, ProjectionType.RIGHT_CORONAL, ProjectionType.RIGHT_AXIAL):
                got = aip_project(v, ptype)
                oh, ow = plane_shape(v.dims, ptype)
                for a in range(oh):
                    for b in range(ow):
                        total = 0.0
                        n = v.dims[ptype.axis]
                        for k in range(n):
                            idx = [a, b]
                            idx.insert(ptype.axis, k)
                            total += float(v.voxels[tuple(idx)])
                        assert abs(float(got[a, b]) - total / n) < 1e-6

    def test_mip_pointwise_at_least_aip(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            v = unit_volume(rng.random((5, 6, 7), dtype=np.float32))
            for ptype in ALL_PROJECTIONS:
                assert np.all(mip_project(v, ptype) >= aip_project(v, ptype) - 1e-7)

    def test_brightening_a_voxel_never_darkens_its_mip_pixel(self):
        rng = np.random.default_rng(34)
        vox = rng.random((4, 5, 6), dtype=np.float32) * 0.5
        before = mip_project(unit_volume(vox), ProjectionType.RIGHT_AXIAL)
        vox2 = vox.copy()
        vox2[2, 3, 4] = 0.99
        after = mip_project(unit_volume(vox2), ProjectionType.RIGHT_AXIAL)
        assert after[3, 4] >= before[3, 4]
        mask = np.ones_like(before, dtype=bool)
        mask[3, 4] = False
        np.testing.assert_array_equal(after[mask], before[mask])

    def test_mip_rejects_hu_volume(self):
        with pytest.raises(InvalidArgumentError):
            mip_project(Volume(np.zeros((2, 2, 2), dtype=np.int16)), ProjectionType.RIGHT_AXIAL)


class TestProjectMask:
    def test_empty_mask_projects_empty(self):
        m = Volume(np.zeros((3, 3, 3), dtype=np.uint8))
        assert not project_mask(m, ProjectionType.RIGHT_AXIAL).any()

    def test_single_voxel_projects_to_single_pixel(self):
        vox = np.zeros((3, 4, 5), dtype=np.uint8)
        vox[1, 2, 3] = 1
        out = project_mask(Volume(vox), ProjectionType.RIGHT_CORONAL)  # collapse y
        expected = np.zeros((3, 5), dtype=np.uint8)
        expected[1, 3] = 1
        np.testing.assert_array_equal(out, expected)

    def test_full_mask_projects_full(self):
        m = Volume(np.ones((3, 3, 3), dtype=np.uint8))
        assert project_mask(m, ProjectionType.RIGHT_SAGITTAL).all()


class TestCropResize:
    def test_canvas_sized_full_mask_is_identity(self):
        rng = np.random.default_rng(41)
        img = rng.random((64, 64))
        mask = np.ones((64, 64), dtype=np.uint8)
        pi, pm = crop_resize_to_canvas(img, mask, ProjectionType.RIGHT_AXIAL, canvas=(64, 64))
        np.testing.assert_array_equal(pi.pixels, img.astype(np.float32))
        np.testing.assert_array_equal(pm.pixels, mask)
        assert pi.geometry.scale == 1.0

    def test_scale_uses_larger_cropped_extent(self):
        # 10-row x 20-col mask away from edges: crop is 14x24, scale 256/24
        img = np.zeros((128, 128))
        mask = np.zeros((128, 128), dtype=np.uint8)
        mask[50:60, 40:60] = 1
        pi, _ = crop_resize_to_canvas(img, mask, ProjectionType.RIGHT_AXIAL, canvas=(256, 256))
        assert pi.geometry.bbox == (48, 38, 62, 62)
        assert pi.geometry.scale == 256.0 / 24.0

    def test_mask_superset_of_image_support(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            img = rng.random((40, 50))
            mask = np.zeros((40, 50), dtype=np.uint8)
            r, c = rng.integers(5, 20), rng.integers(5, 25)
            mask[r : r + rng.integers(4, 15), c : c + rng.integers(4, 15)] = 1
            pi, pm = crop_resize_to_canvas(img, mask, ProjectionType.RIGHT_AXIAL, canvas=(96, 96))
            assert not np.any((pi.pixels > 0) & (pm.pixels == 0))

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            crop_resize_to_canvas(np.zeros((8, 8)), np.zeros((8, 8), dtype=np.uint8), ProjectionType.RIGHT_AXIAL)

    def test_geometry_dict_round_trip(self):
        geo = ProjectionGeometry(
            ptype=ProjectionType.LEFT_CORONAL,
            plane_shape=(64, 96),
            bbox=(3, 5, 40, 70),
            scale=256.0 / 67.0,
            canvas=(256, 256),
        )
        assert ProjectionGeometry.from_dict(geo.to_dict()) == geo


@pytest.fixture(scope="module")
def phantom():
    ct, mask, _ = generate_case(PhantomConfig(dims=(32, 48, 48), seed=9, vessel_count=6))
    return ct, split_left_right(mask)


class TestProjectCase:

    def test_six_outputs_in_canonical_order(self, phantom):
        ct, pair = phantom
        pairs = project_case(ct, pair, canvas=(64, 64))
        assert [img.ptype for img, _ in pairs] == list(ALL_PROJECTIONS)
        assert [m.ptype for _, m in pairs] == list(ALL_PROJECTIONS)

    def test_images_nonzero_only_inside_their_masks(self, phantom):
        ct, pair = phantom
        for img, m in project_case(ct, pair, canvas=(64, 64)):
            assert not np.any((img.pixels > 0) & (m.pixels == 0))
            assert 0.0 <= float(img.pixels.min()) and float(img.pixels.max()) <= 1.0

    def test_mirrored_case_swaps_sides(self, phantom):
        """x-flipping a case (and swapping lung labels) swaps right/left outputs."""
        ct, pair = phantom
        flipped_ct = Volume(ct.voxels[:, :, ::-1], ct.spacing_mm)
        relabeled = np.zeros_like(pair.labeled().voxels)
        relabeled[pair.labeled().voxels[:, :, ::-1] == 1] = 2
        relabeled[pair.labeled().voxels[:, :, ::-1] == 2] = 1
        flipped_pair = split_left_right(Volume(relabeled, ct.spacing_mm))

        orig = {img.ptype: img for img, _ in project_case(ct, pair, canvas=(64, 64))}
        flip = {img.ptype: img for img, _ in project_case(flipped_ct, flipped_pair, canvas=(64, 64))}
        # sagittal planes (z, y) are untouched by an x flip: exact equality
        np.testing.assert_array_equal(
            flip[ProjectionType.RIGHT_SAGITTAL].pixels, orig[ProjectionType.LEFT_SAGITTAL].pixels
        )
        np.testing.assert_array_equal(
            flip[ProjectionType.LEFT_SAGITTAL].pixels, orig[ProjectionType.RIGHT_SAGITTAL].pixels
        )
        # coronal/axial planes mirror their column axis; resampling positions
        # shift by a sub-pixel amount, so compare the raw projected planes
        prep_orig_left = prepare_lung_volume(ct, pair.mask("left"))
        prep_flip_right = prepare_lung_volume(flipped_ct, flipped_pair.mask("right"))
        for ptype in (ProjectionType.RIGHT_CORONAL, ProjectionType.RIGHT_AXIAL):
            got = mip_project(prep_flip_right, ptype)
            want = mip_project(prep_orig_left, ptype)[:, ::-1]
            np.testing.assert_array_equal(got, want)

    def test_empty_left_lung_raises(self, phantom):
        ct, pair = phantom
        broken = LungPair(pair.right, Volume(np.zeros(ct.dims, dtype=np.uint8), ct.spacing_mm))
        with pytest.raises(EmptyMaskError):
            project_case(ct, broken, canvas=(64, 64))

    def test_unsegmented_ignores_masks(self, phantom):
        ct, pair = phantom
        pairs = project_case(ct, pair, canvas=(64, 64), unsegmented=True)
        by_ptype = {img.ptype: img for img, _ in pairs}
        np.testing.assert_array_equal(
            by_ptype[ProjectionType.RIGHT_AXIAL].pixels, by_ptype[ProjectionType.LEFT_AXIAL].pixels
        )

    def test_unknown_method_rejected(self, phantom):
        ct, pair = phantom
        with pytest.raises(InvalidArgumentError):
            project_case(ct, pair, method="median")
