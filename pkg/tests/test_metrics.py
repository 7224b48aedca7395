import numpy as np
import pytest

from petfuse.errors import ConfigError, ContractError
from petfuse.metrics import (
    CaseMetrics,
    CaseRecord,
    RankWeights,
    aggregate_cv,
    build_report,
    cv_mean,
    dice,
    display_round,
    evaluate_case,
    false_negative_volume,
    false_positive_volume,
    weighted_rank,
)

from .conftest import make_mask, random_mask
from .oracles import metrics_oracle


class TestDice:
    def test_identical_masks(self, rng):
        mask = random_mask(rng, (5, 5, 5), density=0.4)
        assert dice(mask, mask) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert dice(make_mask(a), make_mask(b)) == 0.0

    def test_half_overlap(self):
        a = np.zeros((4, 4, 4))
        b = np.zeros((4, 4, 4))
        a[0, 0, :4] = 1
        b[0, 0, 2:4] = 1
        b[1, 1, :2] = 1
        assert dice(make_mask(a), make_mask(b)) == 0.5

    def test_both_empty_convention(self):
        empty = make_mask(np.zeros((3, 3, 3)))
        assert dice(empty, empty) == 1.0

    def test_symmetry(self, rng):
        for _ in range(20):
            a = random_mask(rng, (5, 5, 5), density=0.3)
            b = random_mask(rng, (5, 5, 5), density=0.3)
            assert dice(a, b) == dice(b, a)

    def test_dim_mismatch(self):
        with pytest.raises(ContractError):
            dice(make_mask(np.zeros((2, 2, 2))), make_mask(np.zeros((3, 2, 2))))

    def test_spacing_mismatch(self):
        with pytest.raises(ContractError):
            dice(make_mask(np.zeros((2, 2, 2)), (1, 1, 1)), make_mask(np.zeros((2, 2, 2)), (2, 1, 1)))


class TestVolumes:
    def test_empty_pred_fpv_zero(self, rng):
        gt = random_mask(rng, (4, 4, 4), density=0.3)
        assert false_positive_volume(make_mask(np.zeros((4, 4, 4))), gt) == 0.0

    def test_pred_subset_of_gt_fpv_zero(self):
        gt = np.zeros((6, 6, 6))
        gt[1:5, 1:5, 1:5] = 1
        pred = np.zeros((6, 6, 6))
        pred[2:4, 2:4, 2:4] = 1
        assert false_positive_volume(make_mask(pred), make_mask(gt)) == 0.0

    def test_fpv_fixture_two_components(self):
        spacing = (2.0, 2.0, 2.0)
        pred = np.zeros((20, 8, 8))
        gt = np.zeros((20, 8, 8))
        pred[0:5, 0, 0] = 1  # component A: 5 voxels, disjoint from gt
        pred[10:17, 4, 4] = 1  # component B: 7 voxels, one overlapping gt
        gt[16, 4, 4] = 1
        fpv = false_positive_volume(make_mask(pred, spacing), make_mask(gt, spacing), 18)
        assert fpv == pytest.approx(5 * 8 / 1000.0)  # only A counts -> 0.04 mL

    def test_fnv_whole_component_missed(self):
        gt = np.zeros((12, 4, 4))
        gt[0:10, 0, 0] = 1
        fnv = false_negative_volume(make_mask(np.zeros((12, 4, 4))), make_mask(gt))
        assert fnv == pytest.approx(0.01)

    def test_fnv_zero_when_equal(self, rng):
        mask = random_mask(rng, (5, 5, 5), density=0.4)
        assert false_negative_volume(mask, mask) == 0.0

    def test_duality_fpv_fnv(self, rng):
        for _ in range(30):
            a = random_mask(rng, (5, 5, 5), density=0.25)
            b = random_mask(rng, (5, 5, 5), density=0.25)
            for connectivity in (6, 18, 26):
                assert false_positive_volume(a, b, connectivity) == false_negative_volume(b, a, connectivity)

    def test_matches_flood_oracle(self, rng):
        for _ in range(60):
            dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
            spacing = tuple(float(s) for s in rng.uniform(0.5, 3.0, size=3))
            pred = random_mask(rng, dims, density=0.3, spacing=spacing)
            gt = random_mask(rng, dims, density=0.3, spacing=spacing)
            for connectivity in (6, 18, 26):
                d_o, fpv_o, fnv_o = metrics_oracle(pred.data, gt.data, spacing, connectivity)
                assert dice(pred, gt) == d_o
                assert false_positive_volume(pred, gt, connectivity) == pytest.approx(fpv_o, rel=1e-9)
                assert false_negative_volume(pred, gt, connectivity) == pytest.approx(fnv_o, rel=1e-9)

    def test_disjoint_component_adds_its_volume(self, rng):
        gt = random_mask(rng, (10, 10, 10), density=0.1)
        pred_data = np.zeros((10, 10, 10))
        pred = make_mask(pred_data)
        base = false_positive_volume(pred, gt)
        grown = pred_data.copy()
        corner = np.logical_not(gt.data.astype(bool))
        # place a 2-voxel component well away from gt
        spot = None
        for x in range(9):
            for y in range(10):
                for z in range(10):
                    region = gt.data[max(0, x - 2) : x + 4, max(0, y - 2) : y + 3, max(0, z - 2) : z + 3]
                    if corner[x, y, z] and corner[x + 1, y, z] and not region.any():
                        spot = (x, y, z)
                        break
                if spot:
                    break
            if spot:
                break
        assert spot is not None
        x, y, z = spot
        grown[x, y, z] = 1
        grown[x + 1, y, z] = 1
        assert false_positive_volume(make_mask(grown), gt) == pytest.approx(base + 2 / 1000.0)

    def test_mm3_unit(self):
        pred = np.zeros((4, 4, 4))
        pred[0, 0, 0] = 1
        fpv = false_positive_volume(make_mask(pred, (2, 2, 2)), make_mask(np.zeros((4, 4, 4)), (2, 2, 2)), unit="mm3")
        assert fpv == pytest.approx(8.0)


class TestEvaluateCase:
    def test_healthy_case_policy(self):
        pred = np.zeros((6, 6, 6))
        pred[0:5, 0, 0] = 1
        cm = evaluate_case(make_mask(pred), make_mask(np.zeros((6, 6, 6))))
        assert cm.healthy_gt
        assert cm.dice is None and cm.fnv_ml is None
        assert cm.fpv_ml == pytest.approx(0.005)
        assert "healthy-gt" in cm.flags

    def test_perfect_prediction(self, rng):
        mask = random_mask(rng, (5, 5, 5), density=0.4)
        cm = evaluate_case(mask, mask)
        assert cm.dice == 1.0 and cm.fpv_ml == 0.0 and cm.fnv_ml == 0.0
        assert not cm.healthy_gt

    def test_composition_matches_parts(self, rng):
        pred = random_mask(rng, (6, 6, 6), density=0.3)
        gt = random_mask(rng, (6, 6, 6), density=0.3)
        cm = evaluate_case(pred, gt, 26)
        assert cm.dice == dice(pred, gt)
        assert cm.fpv_ml == false_positive_volume(pred, gt, 26)
        assert cm.fnv_ml == false_negative_volume(pred, gt, 26)

    def test_invariant_enforced(self):
        with pytest.raises(ContractError):
            CaseMetrics(dice=0.5, fpv_ml=0.0, fnv_ml=None, healthy_gt=True)


class TestAggregation:
    def test_display_round_truncates(self):
        assert display_round(0.66756) == 0.6675
        assert display_round(0.69736) == 0.6973
        assert display_round(0.72124) == 0.7212
        assert display_round(74.36, decimals=1) == 74.3

    def test_display_round_guards_float_noise(self):
        assert display_round(5.936699999999999) == 5.9367
        assert display_round(0.1 + 0.2, decimals=1) == 0.3

    def test_cv_mean_exact_fixture(self):
        fnv = [5.1083, 6.5240, 7.3805, 4.3221, 6.3486]
        assert display_round(cv_mean(fnv)) == 5.9367

    def test_swin_dice_fixture(self):
        folds = [0.6627, 0.6574, 0.6732, 0.6905, 0.6540]
        assert display_round(cv_mean(folds)) == 0.6675

    def test_fullres_dice_fixture(self):
        folds = [0.6876, 0.6829, 0.7133, 0.7275, 0.6755]
        assert display_round(cv_mean(folds)) == 0.6973

    def test_single_fold_is_itself(self):
        out = aggregate_cv([{"dice": 0.5}])
        assert out["mean"]["dice"] == 0.5
        assert out["n_folds"] == 1

    def test_aggregate_cv_structure(self):
        folds = [{"dice": 0.7146, "fnv_ml": 5.1083}, {"dice": 0.6976, "fnv_ml": 6.5240}]
        out = aggregate_cv(folds)
        assert set(out) == {"mean", "display", "n_folds"}
        assert out["mean"]["dice"] == pytest.approx((0.7146 + 0.6976) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            aggregate_cv([])
        with pytest.raises(ConfigError):
            cv_mean([])

    def test_mismatched_fold_keys_rejected(self):
        with pytest.raises(ConfigError):
            aggregate_cv([{"dice": 0.5}, {"fpv_ml": 1.0}])


class TestWeightedRank:
    def test_equal_ranks(self):
        assert weighted_rank(1, 1, 1) == 1.0

    def test_default_weights_fixture(self):
        assert weighted_rank(1, 2, 3) == pytest.approx(1.75)

    def test_degenerate_weights(self):
        assert weighted_rank(4, 9, 2, RankWeights(1.0, 0.0, 0.0)) == 4.0

    def test_weight_validation(self):
        with pytest.raises(ConfigError):
            RankWeights(0.5, 0.5, 0.5)
        with pytest.raises(ConfigError):
            RankWeights(-0.5, 1.0, 0.5)
        with pytest.raises(ConfigError):
            weighted_rank(0, 1, 1)


class TestReport:
    def make_records(self):
        return [
            CaseRecord("s1", CaseMetrics(0.8, 0.1, 0.2, False), fold=0),
            CaseRecord("s2", CaseMetrics(0.6, 0.3, 0.0, False), fold=0),
            CaseRecord("s3", CaseMetrics(None, 0.5, None, True, ("healthy-gt",)), fold=1),
            CaseRecord("s4", CaseMetrics(0.9, 0.0, 0.1, False), fold=1),
        ]

    def test_stable_key_set(self):
        report = build_report(self.make_records())
        assert set(report) == {"volume_unit", "connectivity", "cases", "overall", "fold_means", "cv", "weighted_rank"}
        empty_folds = build_report([CaseRecord("x", CaseMetrics(0.5, 0.0, 0.0, False))])
        assert set(empty_folds) == set(report)

    def test_healthy_case_excluded_from_dice_mean(self):
        report = build_report(self.make_records())
        overall = report["overall"]
        assert overall["dice"] == pytest.approx((0.8 + 0.6 + 0.9) / 3)
        assert overall["fpv_ml"] == pytest.approx((0.1 + 0.3 + 0.5 + 0.0) / 4)
        assert overall["n_cases"] == 4
        assert overall["n_with_lesions"] == 3

    def test_cv_block(self):
        report = build_report(self.make_records())
        assert report["cv"]["n_folds"] == 2
        fold0 = report["fold_means"]["0"]
        assert fold0["dice"] == pytest.approx(0.7)

    def test_case_records_sorted_and_complete(self):
        report = build_report(self.make_records())
        assert [c["study_id"] for c in report["cases"]] == ["s1", "s2", "s3", "s4"]
        assert set(report["cases"][2]) >= {"study_id", "dice", "fpv_ml", "fnv_ml", "healthy_gt", "flags"}
        assert report["cases"][2]["dice"] is None
