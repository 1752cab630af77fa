import logging

import numpy as np
import pytest
import scipy.stats
from hypothesis import assume, given, settings, strategies as st

from handuse.classify import Label, LabelledSample
from handuse.core import DataError, Laterality, PipelineConfig
from handuse.evaluation import (ConfusionCounts, ablation_run, correlations, frame_scores, loso_predict, loso_split,
                                metric_correlations, midranks, pearson, per_subject_scores, spearman,
                                write_evaluation_json, write_scatter_csv)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# -- frame scores ------------------------------------------------------------

def test_perfect_prediction():
    t = np.array([0, 1, 1, 0, 1])
    f1, acc, _ = frame_scores(t, t)
    assert f1 == 1.0 and acc == 1.0


def test_complement_prediction():
    t = np.array([0, 1, 1, 0, 1])
    f1, acc, _ = frame_scores(1 - t, t)
    assert f1 == 0.0 and acc == 0.0


def test_hand_counted_confusion():
    pred = np.array([1, 1, 1, 1, 0] + [0] * 5)
    truth = np.array([1, 1, 1, 0, 1] + [0] * 5)
    f1, acc, c = frame_scores(pred, truth)
    assert c == ConfusionCounts(tp=3, fp=1, tn=5, fn=1)
    assert c.precision == 0.75 and c.recall == 0.75
    assert f1 == 0.75 and acc == 0.8


def test_no_positives_anywhere_gives_zero_f1():
    f1, acc, _ = frame_scores(np.zeros(4), np.zeros(4))
    assert f1 == 0.0 and acc == 1.0


def test_frame_score_errors():
    with pytest.raises(DataError):
        frame_scores(np.zeros(3), np.zeros(4))
    with pytest.raises(DataError):
        frame_scores(np.array([0, -1]), np.array([0, 1]))


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60), st.randoms())
def test_scores_ignore_pair_order(pairs, shuffler):
    p, t = map(np.array, zip(*pairs))
    shuffled = list(pairs)
    shuffler.shuffle(shuffled)
    ps, ts = map(np.array, zip(*shuffled))
    assert frame_scores(p, t)[:2] == frame_scores(ps, ts)[:2]


# -- correlations ------------------------------------------------------------

def test_spearman_of_two_swapped_pairs():
    # d = (1, 1, 1, 1, 0): rho = 1 - 6 * 4 / (5 * 24) = 0.8
    assert spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5]) == pytest.approx(0.8, abs=1e-12)


def test_midranks_average_ties():
    assert midranks([10, 20, 20, 30]).tolist() == [1.0, 2.5, 2.5, 4.0]


def test_identical_lists_correlate_perfectly():
    rep = correlations([1, 3, 2, 5, 4, 7], [1, 3, 2, 5, 4, 7])
    assert rep.pearson_r == 1.0 and rep.spearman_rho == 1.0
    assert rep.pearson_p_one_tailed < 0.001


def test_negated_list_has_right_tail_p_near_one():
    x = [1.0, 3, 2, 5, 4]
    rep = correlations(x, [-v for v in x])
    assert rep.pearson_r == -1.0 and rep.pearson_p_one_tailed == pytest.approx(1.0)


def test_constant_list_is_flagged_not_nan():
    rep = correlations([1, 1, 1, 1], [1, 2, 3, 4])
    assert not rep.defined and rep.pearson_r is None and rep.spearman_rho is None


def test_correlation_errors():
    with pytest.raises(DataError):
        correlations([1, 2], [1, 2])
    with pytest.raises(DataError):
        correlations([1, 2, 3], [1, 2])


@settings(max_examples=40)
@given(st.lists(st.tuples(finite, finite), min_size=3, max_size=40))
def test_pearson_and_p_match_scipy(pairs):
    x, y = map(np.array, zip(*pairs))
    assume(np.ptp(x) > 1e-3 and np.ptp(y) > 1e-3)
    rep = correlations(x, y)
    ref = scipy.stats.pearsonr(x, y, alternative="greater")
    assert rep.pearson_r == pytest.approx(ref.statistic, abs=1e-9)
    assert rep.pearson_p_one_tailed == pytest.approx(ref.pvalue, abs=1e-7)
    assert 0 <= rep.pearson_p_one_tailed <= 1


@settings(max_examples=40)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=3, max_size=40))
def test_spearman_matches_scipy(pairs):
    x, y = map(np.array, zip(*pairs))
    assume(np.ptp(x) > 0 and np.ptp(y) > 0)
    assert spearman(x, y) == pytest.approx(scipy.stats.spearmanr(x, y).statistic, abs=1e-9)


@settings(max_examples=300)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=30),
       st.floats(0.1, 10), st.floats(-10, 10))
def test_pearson_ignores_positive_affine_maps(pairs, a, b):
    x, y = map(np.array, zip(*pairs))
    assume(np.ptp(x) > 1 and np.ptp(y) > 1)
    assert abs(pearson(a * x + b, y) - pearson(x, y)) < 1e-12


@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=30))
def test_spearman_ignores_monotone_maps(pairs):
    x, y = map(np.array, zip(*pairs))
    assume(np.ptp(x) > 0 and np.ptp(y) > 0)
    assert spearman(np.exp(x / 10.0) + x ** 3, y) == spearman(x, y)


# -- LOSO --------------------------------------------------------------------

def samples_for(subjects, per_subject=5, dim=4, rng=None):
    rng = rng or np.random.default_rng(0)
    out = []
    for s in subjects:
        for i in range(per_subject):
            lat = Laterality.LEFT if i % 2 else Laterality.RIGHT
            out.append(LabelledSample(rng.normal(size=dim), Label(i % 2), s, i, lat))
    return out


def test_holding_out_one_of_nine_subjects():
    subjects = [f"S{i}" for i in range(1, 10)]
    train, test = loso_split(samples_for(subjects), "S3")
    assert {s.subject_id for s in test} == {"S3"}
    assert {s.subject_id for s in train} == set(subjects) - {"S3"}
    assert not {s.key for s in train} & {s.key for s in test}


def test_every_sample_is_tested_once():
    data = samples_for(["A", "B", "C", "D"])
    tested = []
    for s in ["A", "B", "C", "D"]:
        train, test = loso_split(data, s)
        assert len(train) + len(test) == len(data)
        tested += [x.key for x in test]
    assert sorted(tested) == sorted(x.key for x in data)


def test_subject_without_samples_warns(caplog):
    with caplog.at_level(logging.WARNING):
        train, test = loso_split(samples_for(["A", "B"]), "C", all_subjects=["A", "B", "C"])
    assert test == [] and len(train) == 10
    assert "no samples" in caplog.text


def test_unknown_subject_and_single_subject_are_errors():
    with pytest.raises(DataError):
        loso_split(samples_for(["A", "B"]), "Z")
    with pytest.raises(DataError):
        loso_split(samples_for(["A"]), "A")


def test_loso_predict_labels_each_sample_once():
    data = samples_for(["A", "B", "C"], per_subject=8)
    ordered, pred = loso_predict(data, PipelineConfig(forest_trees=5), seed=0)
    assert len(ordered) == len(data) and set(pred.tolist()) <= {0, 1}
    scores = per_subject_scores(ordered, pred, by_hand=True)
    assert {(s.subject_id, s.laterality) for s in scores} == {(a, h) for a in "ABC" for h in ("left", "right")}


# -- ablation ----------------------------------------------------------------

def ablation_data(informative: str | None, n_subjects=4, per_subject=120, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_subjects):
        y = rng.integers(0, 2, per_subject)
        X = rng.normal(size=(per_subject, 122))
        if informative == "colour":
            X[:, 120:] += np.where(y[:, None] == 1, 1.5, -1.5)
        out += [LabelledSample(X[i], Label(int(y[i])), f"S{s}", i, Laterality.LEFT) for i in range(per_subject)]
    return out


CFG = PipelineConfig(forest_trees=40)


def test_colour_only_family_matches_the_full_vector_when_only_colour_informs():
    data = ablation_data("colour")
    colour = ablation_run(data, "colour", CFG, seed=0)
    full = ablation_run(data, "all", CFG, seed=0)
    assert colour["feature_dim"] == 2 and full["feature_dim"] == 122
    assert colour["mean_f1"] >= full["mean_f1"] - 0.02


@pytest.mark.parametrize("family", ["flow", "hog", "colour"])
def test_uninformative_data_scores_near_chance(family):
    res = ablation_run(ablation_data(None), family, CFG, seed=0)
    assert 0.4 <= res["mean_f1"] <= 0.6
    assert 0.4 <= res["mean_accuracy"] <= 0.6


def test_flow_family_uses_sixty_columns():
    res = ablation_run(ablation_data(None, per_subject=20), "flow", PipelineConfig(forest_trees=3), seed=0)
    assert res["feature_dim"] == 60 and len(res["subjects"]) == 4


def test_unknown_family_is_an_error():
    with pytest.raises(DataError):
        ablation_run(ablation_data(None, per_subject=10), "depth", CFG)


# -- reports -----------------------------------------------------------------

def test_report_writers(tmp_path):
    rows = [{"subject_id": f"S{i}", "laterality": "left", "metric": "interaction_fraction",
             "predicted": i * 0.1, "actual": i * 0.1 + 0.01} for i in range(4)]
    write_scatter_csv(tmp_path / "s.csv", rows)
    text = (tmp_path / "s.csv").read_text().splitlines()
    assert text[0] == "subject_id,laterality,metric,predicted,actual" and len(text) == 5
    corr = metric_correlations(rows)
    assert corr["interaction_fraction"]["pearson_r"] == pytest.approx(1.0)
    from handuse.evaluation import SubjectScore
    import json
    write_evaluation_json(tmp_path / "e.json", [SubjectScore("S1", "left", 0.5, 0.6, 10),
                                               SubjectScore("S2", "left", 0.7, 0.8, 10)], corr)
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["summary"]["left"]["f1_mean"] == pytest.approx(0.6)
    assert "interaction_fraction" in doc["correlations"]
