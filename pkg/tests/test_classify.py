import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handuse.classify import (ForestModel, Label, LabelledSample, Tree, feature_ablation_views, fit_arrays,
                              forest_fit, forest_predict)
from handuse.core import DataError, Laterality, ModelError, PipelineConfig
from handuse.evaluation import frame_scores

SMALL = PipelineConfig(forest_trees=25)


def gaussian_samples(rng, n, dim=122, sigma=0.1, gap=2.0):
    """Two isotropic clusters whose centres are ``gap`` apart along the all-ones diagonal."""
    centre = np.full(dim, gap / 2 / np.sqrt(dim))
    y = rng.integers(0, 2, n)
    X = rng.normal(0, sigma, (n, dim)) + np.where(y[:, None] == 1, centre, -centre)
    return [LabelledSample(X[i], Label(int(y[i])), f"S{i % 3}", i, Laterality.LEFT) for i in range(n)]


def leaf(vote: int) -> Tree:
    counts = np.array([[0, 1]] if vote else [[1, 0]])
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), counts)


def test_separable_clusters_are_learnt(rng):
    train, test = gaussian_samples(rng, 300), gaussian_samples(rng, 200)
    model = forest_fit(train, SMALL, seed=1)
    pred = np.array([int(forest_predict(model, s.feature)[0]) for s in test])
    f1, _, _ = frame_scores(pred, np.array([int(s.label) for s in test]))
    assert f1 >= 0.95


def test_model_shape_follows_config(rng):
    model = forest_fit(gaussian_samples(rng, 40), SMALL, seed=0)
    assert model.n_trees == 25 and model.feature_dim == 122 and model.n_samples == 40
    assert all(np.all(t.feature < 122) for t in model.trees)


def test_repeated_points_are_memorised():
    a, b = np.zeros(5), np.ones(5)
    samples = [LabelledSample(a, Label.NO_INTERACTION, "S", i) for i in range(5)]
    samples += [LabelledSample(b, Label.INTERACTION, "S", 10 + i) for i in range(5)]
    model = forest_fit(samples, SMALL, seed=3)
    assert forest_predict(model, a) == (Label.NO_INTERACTION, 0.0)
    assert forest_predict(model, b) == (Label.INTERACTION, 1.0)


def test_same_seed_gives_identical_bytes_and_other_seed_differs(rng, tmp_path):
    samples = gaussian_samples(rng, 60, dim=10, sigma=1.0, gap=1.0)
    a = forest_fit(samples, SMALL, seed=7)
    b = forest_fit(samples, SMALL, seed=7)
    a.save(tmp_path / "a.hrf")
    b.save(tmp_path / "b.hrf")
    assert (tmp_path / "a.hrf").read_bytes() == (tmp_path / "b.hrf").read_bytes()
    assert forest_fit(samples, SMALL, seed=8).to_bytes() != a.to_bytes()


@settings(max_examples=10)
@given(st.randoms(use_true_random=False))
def test_training_order_does_not_matter(shuffler):
    samples = gaussian_samples(np.random.default_rng(5), 40, dim=6, sigma=1.0, gap=1.0)
    shuffled = list(samples)
    shuffler.shuffle(shuffled)
    cfg = PipelineConfig(forest_trees=5)
    assert forest_fit(samples, cfg, seed=2).to_bytes() == forest_fit(shuffled, cfg, seed=2).to_bytes()


def test_model_file_round_trip_and_corruption(rng, tmp_path):
    model = forest_fit(gaussian_samples(rng, 50, dim=8), SMALL, seed=0)
    raw = model.to_bytes()
    back = ForestModel.from_bytes(raw)
    X = rng.normal(size=(20, 8))
    assert np.array_equal(back.vote_fraction(X), model.vote_fraction(X))
    assert back.to_bytes() == raw
    with pytest.raises(ModelError):
        ForestModel.from_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ModelError):
        ForestModel.from_bytes(raw + b"\0")
    with pytest.raises(ModelError):
        ForestModel.load(tmp_path / "absent.hrf")


def test_exact_tie_is_no_interaction():
    model = ForestModel(tuple([leaf(1)] * 75 + [leaf(0)] * 75), feature_dim=3)
    label, frac = forest_predict(model, np.zeros(3))
    assert frac == 0.5 and label is Label.NO_INTERACTION


@pytest.mark.parametrize("ones,expected", [(76, Label.INTERACTION), (74, Label.NO_INTERACTION)])
def test_majority_decides(ones, expected):
    model = ForestModel(tuple([leaf(1)] * ones + [leaf(0)] * (150 - ones)), feature_dim=2)
    label, frac = forest_predict(model, np.zeros(2))
    assert label is expected and frac == pytest.approx(ones / 150)


@settings(max_examples=30)
@given(st.integers(0, 150))
def test_label_agrees_with_vote_fraction(ones):
    model = ForestModel(tuple([leaf(1)] * ones + [leaf(0)] * (150 - ones)), feature_dim=1)
    label, frac = forest_predict(model, np.zeros(1))
    assert (label is Label.INTERACTION) == (frac > 0.5)


def test_midpoint_of_symmetric_clusters_is_undecided():
    rng = np.random.default_rng(11)
    X = np.concatenate([rng.normal(-0.5, 0.5, (200, 2)), rng.normal(0.5, 0.5, (200, 2))])
    X = np.concatenate([X, -X])  # point-mirrored copy with swapped labels
    y = np.concatenate([np.repeat([0, 1], 200), np.repeat([1, 0], 200)])
    model = fit_arrays(X, y, PipelineConfig(), seed=0)
    _, frac = model.predict(np.zeros((1, 2)))
    assert 0.3 <= frac[0] <= 0.7


def test_wrong_length_input_is_rejected(rng):
    model = forest_fit(gaussian_samples(rng, 30, dim=4), SMALL, seed=0)
    with pytest.raises(DataError):
        forest_predict(model, np.zeros(5))


@pytest.mark.parametrize("present,missing", [(0, "Interaction"), (1, "NoInteraction")])
def test_single_class_training_names_the_missing_class(present, missing):
    samples = [LabelledSample(np.full(3, i, float), Label(present), "S", i) for i in range(4)]
    with pytest.raises(DataError, match=f"no {missing} samples"):
        forest_fit(samples, SMALL)


def test_too_few_samples_is_an_error():
    with pytest.raises(DataError):
        forest_fit([LabelledSample(np.zeros(3), Label.INTERACTION)], SMALL)


def test_constant_features_are_never_split_on(rng):
    samples = gaussian_samples(rng, 80, dim=5, sigma=1.0, gap=1.5)
    padded = [LabelledSample(np.concatenate([s.feature, np.full(20, 3.0)]), s.label, s.subject_id, s.frame_index,
                             s.laterality) for s in samples]
    base = forest_fit(samples, SMALL, seed=4)
    wide = forest_fit(padded, SMALL, seed=4)
    assert all(np.all(t.feature < 5) for t in wide.trees)
    X = np.stack([s.feature for s in samples])
    Xw = np.stack([s.feature for s in padded])
    assert np.array_equal(base.predict(X)[0], wide.predict(Xw)[0])


def test_ablation_views_slice_in_assembly_order():
    flow, hog, colour = feature_ablation_views(np.arange(122))
    assert np.array_equal(flow, np.arange(60))
    assert np.array_equal(hog, np.arange(60, 120))
    assert np.array_equal(colour, [120, 121])
    with pytest.raises(DataError):
        feature_ablation_views(np.arange(121))
