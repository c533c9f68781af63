"""t-SNE: perplexity calibration, objective descent, blob recovery."""

import numpy as np
import pytest

from stmae.errors import ConfigError, DataError
from stmae.tsne import conditional_probabilities, kmeans2, tsne


def _two_blobs(n_per=40, sep=8.0, dim=10, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, size=(n_per, dim))
    b = rng.normal(0.0, 1.0, size=(n_per, dim))
    b[:, 0] += sep
    x = np.concatenate([a, b])
    labels = np.concatenate([np.zeros(n_per, int), np.ones(n_per, int)])
    return x, labels


class TestCalibration:
    def test_rows_are_distributions(self):
        x, _ = _two_blobs()
        p, worst = conditional_probabilities(x, perplexity=12.0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(p) == 0)

    def test_entropy_matches_perplexity(self):
        # every row's entropy must land within 1e-5 bits of log2(perplexity)
        x, _ = _two_blobs()
        for perp in (5.0, 12.0, 25.0):
            p, worst = conditional_probabilities(x, perplexity=perp)
            assert worst < 1e-5
            off = ~np.eye(len(x), dtype=bool)
            for i in range(len(x)):
                row = p[i, off[i]]
                row = row[row > 0]
                h = -(row * np.log2(row)).sum()
                assert abs(h - np.log2(perp)) < 1e-5

    def test_duplicate_rows_rejected(self):
        x = np.zeros((10, 3))
        with pytest.raises(DataError, match="degenerate"):
            conditional_probabilities(x, perplexity=3.0)


class TestEmbedding:
    def test_kl_tail_is_monotone_nonincreasing(self):
        x, _ = _two_blobs(n_per=30)
        _, hist = tsne(x, perplexity=10.0, iters=200, seed=0)
        tail = hist[len(hist) // 2:]
        assert np.all(np.diff(tail) <= 1e-12)

    def test_two_blob_recovery(self):
        x, labels = _two_blobs(n_per=40, sep=8.0)
        y, _ = tsne(x, perplexity=15.0, iters=300, seed=0)
        assert y.shape == (80, 2)
        assign = kmeans2(y, seed=0)
        agree = max((assign == labels).mean(), (assign != labels).mean())
        assert agree >= 0.95

    def test_deterministic(self):
        x, _ = _two_blobs(n_per=25)
        y1, h1 = tsne(x, perplexity=7.0, iters=120, seed=4)
        y2, h2 = tsne(x, perplexity=7.0, iters=120, seed=4)
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_array_equal(h1, h2)

    def test_too_few_points_rejected(self):
        x = np.random.default_rng(0).normal(size=(30, 4))
        with pytest.raises(ConfigError, match="3\\*perplexity"):
            tsne(x, perplexity=10.0)

    def test_too_few_iters_rejected(self):
        x = np.random.default_rng(0).normal(size=(40, 4))
        with pytest.raises(ConfigError):
            tsne(x, perplexity=5.0, iters=1)


def test_kmeans_separates_obvious_clusters():
    rng = np.random.default_rng(1)
    y = np.concatenate([rng.normal(0, 0.1, (20, 2)),
                        rng.normal(5, 0.1, (20, 2))])
    assign = kmeans2(y, seed=0)
    assert len(set(assign[:20])) == 1
    assert len(set(assign[20:])) == 1
    assert assign[0] != assign[-1]
