"""Score engine oracles: hand-tallied confusion fixtures and paper rows.

Every fixture's rates were worked out on paper from the count matrix; the
assertions compare against those exact rationals.
"""

import numpy as np
import pytest

from lungsound.metrics import (
    ConfusionMatrix,
    MetricError,
    ScoreTriple,
    TASK1_CLASSES,
    TASK2_CLASSES,
    aggregate_posteriors,
    all_subtask_scores,
    icbhi_score,
    make_score_triple,
    mean_fold_scores,
    pool_confusions,
    predict_label,
    sensitivity,
    specificity,
    subtask_scores,
)


class TestAggregation:
    def test_mean_posterior(self):
        probs = np.array([[0.8, 0.2], [0.4, 0.6], [0.6, 0.4]])
        assert np.allclose(aggregate_posteriors(probs), [0.6, 0.4])

    def test_rejects_empty(self):
        with pytest.raises(MetricError):
            aggregate_posteriors(np.zeros((0, 4)))

    def test_argmax_with_low_index_ties(self):
        assert predict_label(np.array([0.4, 0.4, 0.2])) == 0
        assert predict_label(np.array([0.1, 0.5, 0.4])) == 1
        with pytest.raises(MetricError):
            predict_label(np.zeros((2, 2)))


class TestConfusionMatrix:
    def test_from_pairs_and_totals(self):
        cm = ConfusionMatrix.from_pairs(1, [(0, 0), (0, 1), (3, 3), (3, 3)])
        assert cm.counts[0, 0] == 1 and cm.counts[0, 1] == 1 and cm.counts[3, 3] == 2
        assert cm.total() == 4
        assert list(cm.row_totals()) == [2, 0, 0, 2]
        assert cm.class_names == TASK1_CLASSES

    def test_pair_order_irrelevant(self):
        pairs = [(0, 1), (2, 2), (3, 0), (1, 1), (3, 3)]
        cm1 = ConfusionMatrix.from_pairs(1, pairs)
        cm2 = ConfusionMatrix.from_pairs(1, list(reversed(pairs)))
        assert cm1 == cm2

    def test_shape_validation(self):
        with pytest.raises(MetricError):
            ConfusionMatrix(1, np.zeros((3, 3)))
        with pytest.raises(MetricError):
            ConfusionMatrix(3, np.zeros((3, 3)))
        assert ConfusionMatrix(2, np.zeros((3, 3))).class_names == TASK2_CLASSES

    def test_subtask_task_mismatch(self):
        cm = ConfusionMatrix.empty(1)
        cm.add(0, 0)
        cm.add(3, 3)
        with pytest.raises(MetricError):
            sensitivity(cm, "2-1")
        with pytest.raises(MetricError):
            sensitivity(cm, "9-9")


# Fixture A, task 1 (rows crackle/wheeze/both/normal, 56 cycles):
#   strict hits 10+8+5 = 23 of 36 sick; relaxed block sum 32 of 36;
#   normals 14 of 20 correct.
FIXTURE_A = [
    [10, 2, 1, 3],
    [1, 8, 2, 1],
    [2, 1, 5, 0],
    [3, 2, 1, 14],
]

# Fixture C, task 1: every anomaly lands on a *different* anomaly, so the
# strict reading scores zero while the relaxed one is perfect.
FIXTURE_C = [
    [0, 5, 0, 0],
    [0, 0, 4, 0],
    [3, 0, 0, 0],
    [0, 0, 0, 6],
]

# Fixture D, task 2 (rows chronic/non_chronic/healthy, 30 recordings):
#   strict hits 6+3 = 9 of 20; within-unhealthy block 18 of 20; 8 of 10
#   healthy correct.
FIXTURE_D = [
    [6, 4, 0],
    [5, 3, 2],
    [1, 1, 8],
]

# Fixture E, task 2: unhealthy groups fully swapped.
FIXTURE_E = [
    [0, 7, 0],
    [9, 0, 0],
    [2, 2, 6],
]


class TestHandTalliedFixtures:
    def test_fixture_a_task1_mixed(self):
        cm = ConfusionMatrix(1, FIXTURE_A)
        assert sensitivity(cm, "1-1") == 23 / 36
        assert sensitivity(cm, "1-2") == 32 / 36
        assert specificity(cm, "1-1") == 14 / 20
        assert specificity(cm, "1-2") == 14 / 20
        assert subtask_scores(cm, "1-1").score == (23 / 36 + 14 / 20) / 2.0
        assert subtask_scores(cm, "1-2").score == (32 / 36 + 14 / 20) / 2.0

    def test_fixture_b_task1_perfect(self):
        cm = ConfusionMatrix(1, np.diag([5, 4, 3, 8]))
        for subtask in ("1-1", "1-2"):
            triple = subtask_scores(cm, subtask)
            assert triple == ScoreTriple(1.0, 1.0, 1.0)

    def test_fixture_c_anomaly_as_anomaly(self):
        cm = ConfusionMatrix(1, FIXTURE_C)
        assert sensitivity(cm, "1-1") == 0.0
        assert sensitivity(cm, "1-2") == 1.0
        assert specificity(cm, "1-2") == 1.0
        assert subtask_scores(cm, "1-1").score == 0.5
        assert subtask_scores(cm, "1-2").score == 1.0

    def test_fixture_d_within_unhealthy_confusion(self):
        cm = ConfusionMatrix(2, FIXTURE_D)
        assert sensitivity(cm, "2-1") == 9 / 20
        assert sensitivity(cm, "2-2") == 18 / 20
        assert specificity(cm, "2-1") == 8 / 10
        assert subtask_scores(cm, "2-1").score == (9 / 20 + 8 / 10) / 2.0
        assert subtask_scores(cm, "2-2").score == (18 / 20 + 8 / 10) / 2.0

    def test_fixture_e_swapped_disease_groups(self):
        cm = ConfusionMatrix(2, FIXTURE_E)
        assert sensitivity(cm, "2-1") == 0.0
        assert sensitivity(cm, "2-2") == 1.0
        assert specificity(cm, "2-2") == 6 / 10
        assert subtask_scores(cm, "2-2").score == (1.0 + 6 / 10) / 2.0

    def test_all_subtask_scores_keys(self):
        assert set(all_subtask_scores(ConfusionMatrix(1, FIXTURE_A))) == {"1-1", "1-2"}
        assert set(all_subtask_scores(ConfusionMatrix(2, FIXTURE_D))) == {"2-1", "2-2"}


class TestPaperScoreRows:
    def test_published_spec_sen_pairs(self):
        # (specificity, sensitivity) -> two-decimal headline score
        for spec, sen, expect in [(0.68, 0.26, 0.47), (0.90, 0.68, 0.79), (0.86, 0.98, 0.92)]:
            assert round(icbhi_score(sen, spec), 2) == expect

    def test_triple_carries_the_average(self):
        triple = make_score_triple(0.6, 0.8)
        assert triple == ScoreTriple(0.6, 0.8, 0.7)


class TestUndefinedRates:
    def test_no_unhealthy_instances(self):
        cm = ConfusionMatrix.empty(1)
        cm.add(3, 3, n=4)
        with pytest.raises(MetricError, match="sensitivity undefined"):
            sensitivity(cm, "1-1")
        assert specificity(cm, "1-1") == 1.0

    def test_no_healthy_instances(self):
        cm = ConfusionMatrix.empty(2)
        cm.add(0, 0, n=4)
        with pytest.raises(MetricError, match="specificity undefined"):
            specificity(cm, "2-1")
        assert sensitivity(cm, "2-1") == 1.0


class TestRelaxedDominatesStrict:
    def test_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            task = int(rng.integers(1, 3))
            c = 4 if task == 1 else 3
            counts = rng.integers(0, 12, size=(c, c))
            counts[0, 0] += 1  # ensure a sick row
            counts[c - 1, c - 1] += 1  # ensure a healthy row
            cm = ConfusionMatrix(task, counts)
            strict, relaxed = ("1-1", "1-2") if task == 1 else ("2-1", "2-2")
            assert sensitivity(cm, relaxed) >= sensitivity(cm, strict)
            for subtask in (strict, relaxed):
                triple = subtask_scores(cm, subtask)
                assert 0.0 <= triple.sensitivity <= 1.0
                assert 0.0 <= triple.specificity <= 1.0
                assert 0.0 <= triple.score <= 1.0


class TestFoldAggregation:
    def test_pooling_sums_counts(self):
        a = ConfusionMatrix(1, FIXTURE_A)
        c = ConfusionMatrix(1, FIXTURE_C)
        pooled = pool_confusions([a, c])
        assert np.array_equal(pooled.counts, np.array(FIXTURE_A) + np.array(FIXTURE_C))
        assert pooled.total() == a.total() + c.total()

    def test_pooling_rejects_mixed_tasks(self):
        with pytest.raises(MetricError):
            pool_confusions([ConfusionMatrix(1, FIXTURE_A), ConfusionMatrix(2, FIXTURE_D)])
        with pytest.raises(MetricError):
            pool_confusions([])

    def test_mean_fold_scores(self):
        triples = [make_score_triple(0.6, 0.8), make_score_triple(0.8, 0.6)]
        mean = mean_fold_scores(triples)
        assert mean == ScoreTriple(0.7, 0.7, 0.7)
        with pytest.raises(MetricError):
            mean_fold_scores([])
