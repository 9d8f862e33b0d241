import numpy as np
import pytest

from soundgnn.errors import ValidationError
from soundgnn.metrics import auprc, evaluate_scores, metrics


def brute_force_ap(scores, labels):
    """Average precision from the definition: precision at the rank of each
    positive, ranks broken by input position."""
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    total, hits = 0.0, 0
    for k, i in enumerate(ranked, start=1):
        if labels[i]:
            hits += 1
            total += hits / k
    return total / sum(labels)


class TestMetrics:
    def test_counts(self):
        r = metrics([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert (r.tp, r.fp, r.fn, r.tn) == (2, 1, 1, 1)
        assert r.accuracy == pytest.approx(0.6)
        assert r.precision == pytest.approx(2 / 3) and r.recall == pytest.approx(2 / 3)
        assert r.f1 == pytest.approx(2 / 3)

    def test_no_positive_predictions(self):
        r = metrics([0, 0], [1, 0])
        assert r.precision == 0.0 and r.recall == 0.0 and r.f1 == 0.0

    @pytest.mark.parametrize("preds,labels", [([], []), ([1], [1, 0])])
    def test_invalid(self, preds, labels):
        with pytest.raises(ValidationError):
            metrics(preds, labels)

    def test_report_json(self):
        r = evaluate_scores([0.9, 0.2], [1, 0], 0.5, split="test")
        obj = r.to_json()
        assert obj["tp"] == 1 and obj["metadata"] == {"threshold": 0.5, "split": "test"}
        assert obj["auprc"] == 1.0


class TestAveragePrecision:
    def test_example(self):
        assert auprc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(0.8333333333)

    def test_perfect_ranking(self):
        assert auprc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_ties_keep_input_order(self):
        assert auprc([0.5, 0.5], [0, 1]) == pytest.approx(0.5)
        assert auprc([0.5, 0.5], [1, 0]) == 1.0

    def test_needs_positive(self):
        with pytest.raises(ValidationError):
            auprc([0.1, 0.2], [0, 0])

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_definition(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        scores = rng.integers(0, 5, n) / 4
        labels = rng.integers(0, 2, n)
        labels[0] = 1
        assert auprc(scores, labels) == pytest.approx(brute_force_ap(list(scores), list(labels)))
