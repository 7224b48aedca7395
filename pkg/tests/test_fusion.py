import numpy as np
import pytest

from petfuse.errors import ConfigError, ContractError
from petfuse.fusion import binarize, blend_windows, late_fuse, plan_windows, sliding_window_infer
from petfuse.preprocess import CaseBundle
from petfuse.volume import ProbabilityVolume

from .conftest import make_volume
from .oracles import blend_oracle


def prob_of(data, spacing=(1.0, 1.0, 1.0)):
    return ProbabilityVolume(np.asarray(data, dtype=np.float32), spacing)


def axis_starts(plan, axis):
    return sorted({s[axis] for s in plan.starts})


class TestPlanWindows:
    def test_exact_fit_single_window(self):
        plan = plan_windows((96, 96, 96), (96, 96, 96), 0.25)
        assert plan.starts == ((0, 0, 0),)
        assert plan.padded_dims == (96, 96, 96)

    def test_dim_144_stride_72(self):
        plan = plan_windows((144, 96, 96), (96, 96, 96), 0.25)
        assert axis_starts(plan, 0) == [0, 48]
        assert axis_starts(plan, 1) == [0]

    def test_dim_100_clamped_last_start(self):
        plan = plan_windows((100, 96, 96), (96, 96, 96), 0.25)
        assert axis_starts(plan, 0) == [0, 4]

    def test_small_axis_padded_high_side_extra(self):
        plan = plan_windows((5, 96, 96), (96, 96, 96), 0.25)
        assert plan.padded_dims == (96, 96, 96)
        # pad total 91: 45 low, 46 high
        assert plan.pad_low == (45, 0, 0)

    def test_every_window_inside_padded_volume(self, rng):
        for _ in range(50):
            dims = tuple(int(d) for d in rng.integers(1, 201, size=3))
            plan = plan_windows(dims, (96, 96, 96), 0.25)
            for start, window, padded in zip(
                zip(*plan.starts), plan.window_dims, plan.padded_dims
            ):
                assert min(start) >= 0
                assert max(start) + window <= padded

    def test_per_axis_coverage_exhaustive(self, rng):
        for _ in range(50):
            dims = tuple(int(d) for d in rng.integers(1, 201, size=3))
            plan = plan_windows(dims, (96, 96, 96), 0.25)
            for axis in range(3):
                starts = axis_starts(plan, axis)
                window = plan.window_dims[axis]
                covered = np.zeros(plan.padded_dims[axis], dtype=bool)
                for s in starts:
                    covered[s : s + window] = True
                assert covered.all()

    def test_overlap_validation(self):
        with pytest.raises(ConfigError):
            plan_windows((10, 10, 10), (4, 4, 4), 1.0)
        with pytest.raises(ConfigError):
            plan_windows((10, 10, 10), (0, 4, 4), 0.25)


class TestBlendWindows:
    def test_single_window_identity(self, rng):
        plan = plan_windows((8, 8, 8), (8, 8, 8), 0.25)
        patch = rng.random((8, 8, 8)).astype(np.float32)
        out = blend_windows(plan, [patch])
        assert np.allclose(out.data, patch, atol=1e-7)

    def test_two_window_overlap_mean(self):
        plan = plan_windows((12, 8, 8), (8, 8, 8), 0.5)
        assert axis_starts(plan, 0) == [0, 4]
        out = blend_windows(plan, [np.full((8, 8, 8), 0.2), np.full((8, 8, 8), 0.8)])
        assert np.allclose(out.data[:4], 0.2)
        assert np.allclose(out.data[4:8], 0.5)
        assert np.allclose(out.data[8:], 0.8)

    def test_matches_accumulate_oracle(self, rng):
        for _ in range(10):
            dims = tuple(int(d) for d in rng.integers(3, 30, size=3))
            window = tuple(int(w) for w in rng.integers(2, 12, size=3))
            overlap = float(rng.choice([0.0, 0.25, 0.5]))
            plan = plan_windows(dims, window, overlap)
            patches = [rng.random(window) for _ in plan.starts]
            out = blend_windows(plan, [p.astype(np.float32) for p in patches])
            expected = blend_oracle(plan.padded_dims, window, list(plan.starts), patches)
            ox, oy, oz = plan.pad_low
            nx, ny, nz = dims
            expected = expected[ox : ox + nx, oy : oy + ny, oz : oz + nz]
            assert np.abs(out.data - expected).max() < 1e-6

    def test_blend_stays_in_patch_range(self, rng):
        plan = plan_windows((10, 6, 6), (6, 6, 6), 0.25)
        patches = [np.full((6, 6, 6), 0.3), np.full((6, 6, 6), 0.9)]
        out = blend_windows(plan, patches)
        assert out.data.min() >= 0.3 - 1e-7 and out.data.max() <= 0.9 + 1e-7

    def test_patch_count_mismatch(self):
        plan = plan_windows((8, 8, 8), (8, 8, 8), 0.25)
        with pytest.raises(ContractError):
            blend_windows(plan, [])

    def test_patch_shape_mismatch_names_window(self):
        plan = plan_windows((8, 8, 8), (8, 8, 8), 0.25)
        with pytest.raises(ContractError, match=r"\(0, 0, 0\)"):
            blend_windows(plan, [np.zeros((4, 4, 4))])


class TestSlidingWindowInfer:
    @staticmethod
    def bundle(dims, pet=None, rng=None):
        pet_data = pet if pet is not None else (rng.random(dims) if rng is not None else np.zeros(dims))
        return CaseBundle(make_volume(pet_data), make_volume(np.zeros(dims)))

    def test_constant_model(self, rng):
        bundle = self.bundle((50, 40, 30), rng=rng)
        out = sliding_window_infer(bundle, lambda p, c: np.full(p.shape, 0.25), (16, 16, 16), 0.25)
        assert out.dims == (50, 40, 30)
        assert (out.data == 0.25).all()

    def test_volume_smaller_than_window(self, rng):
        bundle = self.bundle((5, 7, 9), rng=rng)
        out = sliding_window_infer(bundle, lambda p, c: np.full(p.shape, 0.75), (16, 16, 16), 0.25)
        assert out.dims == (5, 7, 9)
        assert (out.data == 0.75).all()

    def test_coordinate_encoding_model_matches_direct_evaluation(self):
        dims = (40, 20, 12)
        nx = dims[0]
        coord = np.broadcast_to(
            (np.arange(nx, dtype=np.float32) / (nx - 1))[:, None, None], dims
        ).copy()
        bundle = self.bundle(dims, pet=coord)
        out = sliding_window_infer(bundle, lambda p, c: p, (16, 16, 16), 0.25)
        # every window reports the same value for a voxel, so the blend equals
        # the whole-volume evaluation wherever coverage is 1 and the mean of
        # identical values elsewhere
        assert np.abs(out.data - coord).max() < 1e-6

    def test_model_violating_range_names_window(self, rng):
        bundle = self.bundle((20, 8, 8), rng=rng)

        def bad_model(p, c):
            return np.full(p.shape, 1.5)

        with pytest.raises(ContractError, match=r"window at \(0, 0, 0\)"):
            sliding_window_infer(bundle, bad_model, (8, 8, 8), 0.25)

    def test_model_wrong_dims_rejected(self, rng):
        bundle = self.bundle((20, 8, 8), rng=rng)
        with pytest.raises(ContractError, match="shape"):
            sliding_window_infer(bundle, lambda p, c: np.zeros((2, 2, 2)), (8, 8, 8), 0.25)

    def test_spacing_carried_through(self, rng):
        pet = make_volume(rng.random((10, 10, 10)), spacing=(2.0, 3.0, 4.0))
        ct = make_volume(np.zeros((10, 10, 10)), spacing=(2.0, 3.0, 4.0))
        out = sliding_window_infer(CaseBundle(pet, ct), lambda p, c: np.zeros(p.shape), (8, 8, 8), 0.25)
        assert out.spacing_mm == (2.0, 3.0, 4.0)


class TestLateFuse:
    def test_two_volume_mean(self):
        a = prob_of(np.full((3, 3, 3), 0.6))
        b = prob_of(np.full((3, 3, 3), 0.8))
        fused = late_fuse([a, b])
        assert np.allclose(fused.data, 0.7)

    def test_identical_inputs_idempotent(self, rng):
        a = prob_of(rng.random((4, 4, 4)))
        fused = late_fuse([a, a, a])
        assert np.abs(fused.data - a.data).max() < 1e-7

    def test_degenerate_weights_select_first(self, rng):
        a = prob_of(rng.random((4, 4, 4)))
        b = prob_of(rng.random((4, 4, 4)))
        fused = late_fuse([a, b], weights=[1.0, 0.0])
        assert np.abs(fused.data - a.data).max() < 1e-7

    def test_permutation_invariance(self, rng):
        vols = [prob_of(rng.random((5, 5, 5))) for _ in range(4)]
        fused = late_fuse(vols)
        shuffled = late_fuse([vols[2], vols[0], vols[3], vols[1]])
        assert np.abs(fused.data - shuffled.data).max() < 1e-7

    def test_dims_mismatch(self):
        with pytest.raises(ContractError):
            late_fuse([prob_of(np.zeros((2, 2, 2))), prob_of(np.zeros((3, 2, 2)))])

    def test_weight_validation(self):
        a = prob_of(np.zeros((2, 2, 2)))
        with pytest.raises(ConfigError):
            late_fuse([a, a], weights=[0.0, 0.0])
        with pytest.raises(ConfigError):
            late_fuse([a, a], weights=[1.0, -0.5])
        with pytest.raises(ConfigError):
            late_fuse([a, a], weights=[1.0])
        with pytest.raises(ConfigError):
            late_fuse([])


class TestBinarize:
    def test_boundary_is_foreground(self):
        mask = binarize(prob_of(np.full((3, 3, 3), 0.5)), 0.5)
        assert (mask.data == 1.0).all()

    def test_zero_probability_empty(self):
        mask = binarize(prob_of(np.zeros((3, 3, 3))))
        assert not mask.data.any()

    def test_fusion_of_duplicates_binarizes_identically(self, rng):
        for _ in range(10):
            vol = prob_of(rng.random((4, 4, 4)))
            direct = binarize(vol)
            via_fusion = binarize(late_fuse([vol, vol]))
            assert np.array_equal(direct.data, via_fusion.data)

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            binarize(prob_of(np.zeros((2, 2, 2))), 1.5)
