import numpy as np
import pytest

from petfuse.errors import ConfigError, ContractError, DataFormatError
from petfuse.gating import (
    DISEASED,
    HEALTHY,
    BaselineClassifier,
    ClassifierId,
    GateConfig,
    default_members,
    featurize_mip,
    fit_baseline,
    gate,
    load_score_file,
    log_loss,
    log_loss_gradient,
    or_fuse,
    predict_baseline,
    scores_for_study,
    validate_ensemble,
)
from petfuse.projection import MIP2D
from petfuse.volume import ProbabilityVolume

from .oracles import finite_difference_gradient


def mip_of(data):
    arr = np.asarray(data, dtype=np.float32)
    return MIP2D("X", arr, (arr.shape[0], arr.shape[1], 1))


def toy_dataset(rng, n_per_class=20):
    """Linearly separable features: healthy MIP max < 1, diseased max > 5."""
    feats, labels = [], []
    for _ in range(n_per_class):
        feats.append(featurize_mip(mip_of(rng.random((6, 6)) * 0.5)))
        labels.append(0)
        feats.append(featurize_mip(mip_of(rng.random((6, 6)) * 3.0 + 6.0)))
        labels.append(1)
    return feats, labels


class TestClassifierId:
    def test_encode_parse_roundtrip(self):
        for member in default_members():
            assert ClassifierId.parse(member.encode()) == member

    def test_parse_example(self):
        cid = ClassifierId.parse("X-debrained-A")
        assert cid == ClassifierId("X", "debrained", "A")

    @pytest.mark.parametrize("bad", ["Z-brain-A", "X-nobrain-A", "X-brain-", "X-brain", "X-brain-A-B"])
    def test_parse_rejects(self, bad):
        with pytest.raises(ConfigError):
            ClassifierId.parse(bad)

    def test_ensemble_must_cover_all_combinations(self):
        members = list(default_members())
        validate_ensemble(members)
        with pytest.raises(ConfigError):
            validate_ensemble(members[:7])
        with pytest.raises(ConfigError):
            validate_ensemble(members[:7] + [members[0]])
        skewed = members[:7] + [ClassifierId("X", "brain", "C")]
        with pytest.raises(ConfigError):
            validate_ensemble(skewed)

    def test_gate_config_validation(self):
        GateConfig()
        with pytest.raises(ConfigError):
            GateConfig(gamma=1.5)


class TestFeaturize:
    def test_zero_mip(self):
        feats = featurize_mip(mip_of(np.zeros((4, 4))))
        assert feats.tolist() == [0.0] * 6

    def test_max_feature(self, rng):
        data = rng.random((5, 7)) * 12
        assert featurize_mip(mip_of(data))[0] == pytest.approx(data.astype(np.float32).max())

    def test_matches_single_pass_oracle(self, rng):
        data = (rng.random((9, 9)) * 12).astype(np.float32)
        feats = featurize_mip(mip_of(data))
        flat = data.astype(np.float64).ravel()
        expected = [
            flat.max(),
            flat.mean(),
            np.sqrt(((flat - flat.mean()) ** 2).mean()),
            (flat > 2.5).mean(),
            (flat > 5.0).mean(),
            (flat > 10.0).mean(),
        ]
        assert feats == pytest.approx(expected, abs=1e-6)


class TestBaseline:
    def test_zero_model_predicts_half(self):
        clf = BaselineClassifier((0.0,) * 6, 0.0)
        assert predict_baseline(clf, [3.0, 1.0, 0.5, 0.1, 0.0, 0.0]) == 0.5

    def test_bias_saturation(self):
        clf = BaselineClassifier((0.0,) * 6, 20.0)
        assert predict_baseline(clf, [0.0] * 6) > 0.999

    def test_rejects_non_finite_features(self):
        clf = BaselineClassifier((0.0,) * 6, 0.0)
        with pytest.raises(ContractError):
            predict_baseline(clf, [np.inf, 0, 0, 0, 0, 0])

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(5):
            x = rng.normal(size=(12, 6))
            y = rng.integers(0, 2, size=12)
            w = rng.normal(scale=0.5, size=6)
            b = float(rng.normal(scale=0.5))
            clf = BaselineClassifier(tuple(w), b)
            grad_w, grad_b = log_loss_gradient(clf, x, y)
            fd_w, fd_b = finite_difference_gradient(
                lambda wv, bv: log_loss(BaselineClassifier(tuple(wv), bv), x, y), w, b
            )
            assert np.abs(grad_w - fd_w).max() < 1e-5
            assert abs(grad_b - fd_b) < 1e-5

    def test_fit_separable_reaches_full_accuracy(self, rng):
        feats, labels = toy_dataset(rng)
        clf = fit_baseline(feats, labels)
        preds = [int(predict_baseline(clf, f) >= 0.5) for f in feats]
        assert preds == labels

    def test_fit_loss_non_increasing(self, rng):
        feats, labels = toy_dataset(rng, n_per_class=10)
        losses = [log_loss(fit_baseline(feats, labels, epochs=e), feats, labels) for e in range(0, 60, 5)]
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_single_class_dataset(self, rng):
        feats, _ = toy_dataset(rng, n_per_class=8)
        labels = [1] * len(feats)
        clf = fit_baseline(feats, labels)
        assert all(predict_baseline(clf, f) > 0.5 for f in feats)

    def test_zero_epochs_returns_zero_weights(self, rng):
        feats, labels = toy_dataset(rng, n_per_class=4)
        clf = fit_baseline(feats, labels, epochs=0)
        assert clf.weights == (0.0,) * 6 and clf.bias == 0.0
        assert predict_baseline(clf, feats[0]) == 0.5

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            fit_baseline([], [])


class TestOrFuse:
    def test_all_below_gamma_is_healthy(self):
        assert or_fuse([0.1] * 8, 0.3) == HEALTHY

    def test_single_crossing_is_diseased(self):
        assert or_fuse([0.0] * 7 + [0.31], 0.3) == DISEASED

    def test_boundary_counts_as_positive(self):
        assert or_fuse([0.0] * 7 + [0.3], 0.3) == DISEASED

    def test_member_count_enforced(self):
        with pytest.raises(ContractError):
            or_fuse([0.1] * 7, 0.3)

    def test_probability_range_enforced(self):
        with pytest.raises(ContractError):
            or_fuse([0.1] * 7 + [1.2], 0.3)

    def test_monotone_in_every_argument(self, rng):
        for _ in range(50):
            probs = rng.random(8)
            verdict = or_fuse(list(probs), 0.3)
            i = int(rng.integers(8))
            raised = probs.copy()
            raised[i] = min(1.0, raised[i] + rng.random())
            if verdict == DISEASED:
                assert or_fuse(list(raised), 0.3) == DISEASED

    def test_gamma_extremes(self, rng):
        probs = list(rng.random(8))
        assert or_fuse(probs, 0.0) == DISEASED
        assert or_fuse(probs, 1.0000001) == HEALTHY


class TestGate:
    def test_healthy_zeroes(self, rng):
        prob = ProbabilityVolume(rng.random((4, 4, 4)).astype(np.float32), (1, 2, 3))
        out = gate(HEALTHY, prob)
        assert out.dims == prob.dims and out.spacing_mm == prob.spacing_mm
        assert not out.data.any()

    def test_diseased_passthrough(self, rng):
        prob = ProbabilityVolume(rng.random((4, 4, 4)).astype(np.float32), (1, 1, 1))
        assert gate(DISEASED, prob) is prob

    def test_healthy_idempotent(self, rng):
        prob = ProbabilityVolume(rng.random((3, 3, 3)).astype(np.float32), (1, 1, 1))
        once = gate(HEALTHY, prob)
        twice = gate(HEALTHY, once)
        assert not twice.data.any()

    def test_decision_validated(self):
        prob = ProbabilityVolume.zeros((2, 2, 2), (1, 1, 1))
        with pytest.raises(ConfigError):
            gate("unknown", prob)


class TestScoreFile:
    def write_scores(self, path, rows):
        lines = ["study_id,classifier_id,probability"] + [",".join(map(str, r)) for r in rows]
        path.write_text("\n".join(lines) + "\n")

    def test_load_and_lookup(self, tmp_path):
        path = tmp_path / "scores.csv"
        members = default_members()
        self.write_scores(path, [("s1", m.encode(), 0.25) for m in members])
        scores = load_score_file(path)
        assert scores_for_study(scores, "s1", members) == [0.25] * 8

    def test_missing_entry_is_hard_error(self, tmp_path):
        path = tmp_path / "scores.csv"
        members = default_members()
        self.write_scores(path, [("s1", m.encode(), 0.25) for m in members[:-1]])
        scores = load_score_file(path)
        with pytest.raises(DataFormatError, match="no entry"):
            scores_for_study(scores, "s1", members)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("study,classifier,prob\ns1,X-brain-A,0.2\n")
        with pytest.raises(DataFormatError, match="header"):
            load_score_file(path)

    def test_out_of_range_probability_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        self.write_scores(path, [("s1", "X-brain-A", 1.5)])
        with pytest.raises(DataFormatError, match="outside"):
            load_score_file(path)

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        self.write_scores(path, [("s1", "X-brain-A", 0.5), ("s1", "X-brain-A", 0.6)])
        with pytest.raises(DataFormatError, match="duplicate"):
            load_score_file(path)
