import math

import numpy as np
import pytest

from mmctr.metrics import (EvalResult, UndefinedMetricError, auc, auc_bruteforce,
                           logloss)


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_complete_tie_counts_half(self):
        assert auc([0.5, 0.5], [1, 0]) == 0.5

    def test_three_wins_of_four_pairs(self):
        # pairs: (.8,.7)win (.8,.5)win (.6,.7)loss (.6,.5)win -> 3/4
        assert auc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            auc([0.1, 0.2], [0, 0])

    def test_reversed_labels_complement(self):
        rng = np.random.default_rng(0)
        s = rng.random(50)
        y = rng.integers(0, 2, 50)
        y[0], y[1] = 0, 1
        assert auc(s, y) + auc(s, 1 - y) == pytest.approx(1.0, abs=1e-12)

    def test_negated_scores_complement(self):
        rng = np.random.default_rng(1)
        s = rng.random(80)
        y = (rng.random(80) < 0.4).astype(int)
        y[:2] = [0, 1]
        assert auc(s, y) + auc(-s, y) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        s = rng.normal(size=60)
        y = (rng.random(60) < 0.5).astype(int)
        y[:2] = [0, 1]
        base = auc(s, y)
        assert auc(2 * s + 1, y) == pytest.approx(base, abs=1e-12)
        assert auc(1 / (1 + np.exp(-s)), y) == pytest.approx(base, abs=1e-12)


class TestBruteforceOracle:
    def test_all_ties_give_half(self):
        assert auc_bruteforce([0.3, 0.3, 0.3], [1, 0, 1]) == 0.5

    def test_agreement_with_rank_form(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            n = int(rng.integers(2, 400))
            # mix continuous and coarsely quantized scores to force ties
            if rng.random() < 0.5:
                s = rng.integers(0, 5, n) / 4.0
            else:
                s = rng.random(n)
            y = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(int)
            y[int(rng.integers(0, n))] = 1
            y[int(rng.integers(0, n))] = 0
            if y.min() == y.max():
                continue
            assert abs(auc(s, y) - auc_bruteforce(s, y)) < 1e-12


class TestLogloss:
    def test_uniform_predictor_is_ln2(self):
        assert logloss([0.5, 0.5, 0.5], [1, 0, 1]) == pytest.approx(math.log(2))

    def test_clamped_certainty_is_finite(self):
        v = logloss([1.0], [1])
        assert 0 < v < 2e-7

    def test_confident_wrong_is_large_but_finite(self):
        v = logloss([1.0], [0])
        assert math.isfinite(v) and v > 15

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            logloss([], [])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            logloss([1.5], [1])

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        p = rng.random(100)
        y = (rng.random(100) < 0.5).astype(int)
        assert logloss(p, y) >= 0


def test_eval_result_json_line():
    import json

    line = EvalResult(auc=0.75, logloss=0.5, n_samples=10, n_pos=4).json_line("val", 3)
    obj = json.loads(line)
    assert obj == {"split": "val", "epoch": 3, "auc": 0.75, "logloss": 0.5, "n": 10}
