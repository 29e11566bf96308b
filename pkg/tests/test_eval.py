import itertools

import numpy as np
import pytest

from mtlds.evaluation import UndefinedMetricError, auc, evaluate_ranking, ndcg_at_k


def pairwise_auc_oracle(scores, labels):
    """O(n^2) count of positive-over-negative pairs, ties worth 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def ideal_dcg_oracle(gains, k):
    """Exhaustive maximum DCG over every ordering of the gains."""
    best = 0.0
    for order in itertools.permutations(range(len(gains))):
        dcg = sum((2.0 ** gains[i] - 1.0) / np.log2(pos + 2)
                  for pos, i in enumerate(order[:k]))
        best = max(best, dcg)
    return best


class TestAUC:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties_give_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            scores = np.round(rng.standard_normal(200), 2)  # rounding forces ties
            labels = rng.integers(0, 2, 200)
            if labels.sum() in (0, 200):
                continue
            assert abs(auc(scores, labels) - pairwise_auc_oracle(scores, labels)) <= 1e-12

    def test_single_class_error_names_counts(self):
        with pytest.raises(UndefinedMetricError, match="3 positive and 0 negative"):
            auc([0.1, 0.2, 0.3], [1, 1, 1])

    def test_rank_only_dependence(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(50)
        labels = rng.integers(0, 2, 50)
        if labels.sum() in (0, 50):
            labels[0] = 1 - labels[0]
        a = auc(scores, labels)
        b = auc(np.exp(scores) + 7.0, labels)  # strictly increasing transform
        assert a == pytest.approx(b, abs=1e-12)


class TestNDCG:
    def test_ideal_order_scores_one(self):
        assert ndcg_at_k([0.9, 0.5, 0.1], [2, 1, 0], k=3) == pytest.approx(1.0)

    def test_hand_case_reversed_pair(self):
        got = ndcg_at_k([0.1, 0.9], [1, 0], k=2)
        assert got == pytest.approx(1.0 / np.log2(3.0), abs=1e-4)
        assert got == pytest.approx(0.6309, abs=1e-4)

    def test_matches_exhaustive_ideal_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(2, 9))
            gains = rng.integers(0, 4, n)
            if not gains.any():
                gains[0] = 1
            scores = rng.standard_normal(n)
            k = int(rng.integers(1, n + 1))
            by_score = np.argsort(-scores, kind="stable")
            dcg = sum((2.0 ** gains[i] - 1.0) / np.log2(pos + 2)
                      for pos, i in enumerate(by_score[:k]))
            expected = dcg / ideal_dcg_oracle(list(gains), k)
            assert ndcg_at_k(scores, gains, k) == pytest.approx(expected, abs=1e-12)

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            ndcg_at_k([0.5], [1], k=0)

    def test_k_beyond_length_is_stable(self):
        scores = [0.3, 0.9, 0.5]
        gains = [1, 0, 2]
        assert ndcg_at_k(scores, gains, 3) == ndcg_at_k(scores, gains, 50)

    def test_all_zero_gains_undefined(self):
        with pytest.raises(UndefinedMetricError):
            ndcg_at_k([0.5, 0.4], [0, 0], k=2)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.standard_normal(7)
        gains = rng.integers(0, 3, 7)
        gains[0] = 1
        a = ndcg_at_k(scores, gains, 4)
        b = ndcg_at_k(3.0 * scores + 100.0, gains, 4)
        assert a == pytest.approx(b, abs=1e-12)


class TestEvaluateRanking:
    def test_skips_all_zero_gain_impressions(self):
        scores = [np.array([0.5, 0.1]), np.array([0.2, 0.9])]
        gains = [np.array([1, 0]), np.array([0, 0])]
        finals = [np.array([1, 0]), np.array([0, 0])]
        report = evaluate_ranking(scores, gains, finals, (2,))
        assert report.ndcg_at[2] == pytest.approx(1.0)
        assert report.impressions == 2

    def test_global_auc_concatenates_samples(self):
        scores = [np.array([0.9, 0.1]), np.array([0.8, 0.4])]
        gains = [np.array([1, 0]), np.array([1, 0])]
        finals = [np.array([1, 0]), np.array([0, 0])]
        report = evaluate_ranking(scores, gains, finals, (2,))
        assert report.auc == pytest.approx(
            auc([0.9, 0.1, 0.8, 0.4], [1, 0, 0, 0]))

    def test_grouped_auc_averages_defined_impressions(self):
        scores = [np.array([0.9, 0.1]), np.array([0.2, 0.4]), np.array([0.5, 0.6])]
        gains = [np.array([1, 0])] * 3
        finals = [np.array([1, 0]), np.array([1, 0]), np.array([0, 0])]
        report = evaluate_ranking(scores, gains, finals, (2,), grouped_auc=True)
        assert report.auc == pytest.approx((1.0 + 0.0) / 2.0)

    def test_oracle_scores_reach_perfect_ndcg(self):
        rng = np.random.default_rng(4)
        gains = [rng.integers(0, 3, 6) for _ in range(10)]
        for g in gains:
            g[0] = max(g[0], 1)
        scores = [g.astype(float) for g in gains]
        finals = [(g >= 2).astype(int) for g in gains]
        finals[0][:] = [1, 0, 0, 0, 0, 0]
        report = evaluate_ranking(scores, gains, finals, (2, 6, 12))
        for k in (2, 6, 12):
            assert report.ndcg_at[k] == pytest.approx(1.0)
