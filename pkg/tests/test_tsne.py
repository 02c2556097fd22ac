"""Embedding calibration, objective trend, determinism, scatter export."""

import numpy as np
import pytest

from swapgraph.errors import ConfigError
from swapgraph.tsne import (
    conditional_probs,
    export_scatter,
    kl_divergence,
    tsne_embed,
)


def blobs(rng, n_per=12, d=6, k=3, spread=0.3):
    centers = rng.standard_normal((k, d)) * 4.0
    pts = np.concatenate(
        [centers[i] + spread * rng.standard_normal((n_per, d)) for i in range(k)]
    )
    labels = np.repeat(np.arange(k), n_per)
    return pts, labels


class TestBandwidthCalibration:
    def test_entropy_residuals_tiny_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal((40, 5))
            _, residuals = conditional_probs(x, perplexity=10.0)
            assert residuals.max() < 1e-4

    def test_rows_are_distributions(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 4))
        p_cond, _ = conditional_probs(x, perplexity=8.0)
        np.testing.assert_allclose(p_cond.sum(axis=1), np.ones(30), atol=1e-12)
        assert np.all(np.diag(p_cond) == 0.0)

    def test_clustered_inputs_calibrate_too(self):
        rng = np.random.default_rng(2)
        x, _ = blobs(rng)
        _, residuals = conditional_probs(x, perplexity=10.0)
        assert residuals.max() < 1e-4


class TestEmbedding:
    def test_kl_decreases(self):
        rng = np.random.default_rng(3)
        x, _ = blobs(rng)
        _, kl_init, kl_final = tsne_embed(x, perplexity=10, iters=300, seed=0,
                                          return_kl=True)
        assert kl_final < kl_init

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((35, 5))
        a = tsne_embed(x, perplexity=10, iters=120, seed=5)
        b = tsne_embed(x, perplexity=10, iters=120, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_output_shape_and_finite(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((33, 7))
        y = tsne_embed(x, perplexity=10, iters=150, seed=1)
        assert y.shape == (33, 2)
        assert np.all(np.isfinite(y))

    def test_duplicates_land_close(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((30, 4))
        x[17] = x[3]  # exact duplicate pair
        y = tsne_embed(x, perplexity=8, iters=250, seed=2)
        dup = np.linalg.norm(y[17] - y[3])
        dists = np.linalg.norm(y[:, None] - y[None, :], axis=-1)
        offdiag = dists[~np.eye(30, dtype=bool)]
        assert dup < np.percentile(offdiag, 1.0)

    def test_clusters_separate(self):
        rng = np.random.default_rng(7)
        x, labels = blobs(rng)
        y = tsne_embed(x, perplexity=10, iters=400, seed=3)
        same = [np.linalg.norm(a - b)
                for i, a in enumerate(y) for j, b in enumerate(y)
                if i < j and labels[i] == labels[j]]
        diff = [np.linalg.norm(a - b)
                for i, a in enumerate(y) for j, b in enumerate(y)
                if i < j and labels[i] != labels[j]]
        assert np.mean(same) < np.mean(diff)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ConfigError, match="3\\*perplexity"):
            tsne_embed(np.zeros((20, 3)), perplexity=10)

    def test_too_many_samples_rejected(self):
        with pytest.raises(ConfigError, match="2000"):
            tsne_embed(np.zeros((2001, 3)), perplexity=10)


class TestKl:
    def test_identical_distributions_zero(self):
        p = np.full((4, 4), 1 / 12)
        np.fill_diagonal(p, 0)
        assert kl_divergence(p, p) == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(8)
        p = rng.uniform(0.01, 1, (5, 5))
        np.fill_diagonal(p, 0)
        p /= p.sum()
        q = rng.uniform(0.01, 1, (5, 5))
        np.fill_diagonal(q, 0)
        q /= q.sum()
        assert kl_divergence(p, q) >= 0.0


class TestExportScatter:
    def _plot_inputs(self):
        rng = np.random.default_rng(9)
        coords = rng.standard_normal((10, 2))
        labels = rng.integers(0, 4, size=10)
        domains = ["source"] * 5 + ["target"] * 5
        return coords, labels, domains

    def test_marker_counts(self, tmp_path):
        coords, labels, domains = self._plot_inputs()
        svg_path, csv_path = export_scatter(coords, labels, domains, tmp_path / "p.svg")
        svg = svg_path.read_text()
        assert svg.count("<circle") == 5
        assert svg.count("<path") == 5

    def test_csv_rows(self, tmp_path):
        coords, labels, domains = self._plot_inputs()
        _, csv_path = export_scatter(coords, labels, domains, tmp_path / "p.svg")
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "x,y,label,domain"
        assert len(lines) == 11

    def test_byte_identical_rerun(self, tmp_path):
        coords, labels, domains = self._plot_inputs()
        p1, c1 = export_scatter(coords, labels, domains, tmp_path / "a.svg")
        p2, c2 = export_scatter(coords, labels, domains, tmp_path / "b.svg")
        assert p1.read_bytes() == p2.read_bytes()
        assert c1.read_bytes() == c2.read_bytes()

    def test_class_color_consistency(self, tmp_path):
        coords = np.array([[0.0, 0.0], [1.0, 1.0]])
        svg_path, _ = export_scatter(coords, [2, 2], ["source", "target"],
                                     tmp_path / "c.svg")
        svg = svg_path.read_text()
        # both markers carry the same class color
        color_uses = svg.count("#2ca02c")
        assert color_uses == 2

    def test_nonfinite_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="finite"):
            export_scatter(np.array([[np.nan, 0.0]]), [0], ["source"],
                           tmp_path / "n.svg")
