"""Instance graphs: score construction, adjacency algebra, GCN propagation."""

import numpy as np
import pytest

from swapgraph.autodiff import Tape, Tensor, finite_diff_check
from swapgraph.disentangle import LatentCode
from swapgraph.graph import (
    GcnStack,
    build_adjacency,
    build_graph,
    gcn_forward,
    gcn_layer,
    node_features,
    normalize_adjacency,
    similarity_scores,
)

TOL = 1e-4


def random_code(rng, w, d_tex=4, str_shape=(1, 2, 2)):
    return LatentCode(
        z_tex=Tensor(rng.standard_normal((w, d_tex))),
        z_str=Tensor(rng.standard_normal((w,) + str_shape)),
    )


def dense_gcn_oracle(s, x, w, activation):
    # brute-force three-matrix product, elementwise
    n, k = x.shape
    c = w.shape[1]
    sx = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            for p in range(n):
                sx[i, j] += s[i, p] * x[p, j]
    z = np.zeros((n, c))
    for i in range(n):
        for j in range(c):
            for p in range(k):
                z[i, j] += sx[i, p] * w[p, j]
    if activation == "relu":
        z = np.maximum(z, 0.0)
    return z


class TestSimilarityScores:
    def test_identical_codes_score_ones(self):
        code = LatentCode(
            z_tex=Tensor(np.tile([1.0, 2.0, 3.0], (4, 1))),
            z_str=Tensor(np.tile(np.arange(1.0, 5.0).reshape(1, 1, 2, 2), (4, 1, 1, 1))),
        )
        x_sc = similarity_scores(code).data
        np.testing.assert_array_equal(x_sc, np.ones((4, 2)))

    def test_orthogonal_to_anchor(self):
        # anchors are the column means: (1,0)/2 and (0,1)/2 directions
        z_tex = np.array([[2.0, 0.0], [0.0, 2.0], [2.0, 0.0], [0.0, 2.0]])
        code = LatentCode(
            z_tex=Tensor(z_tex),
            z_str=Tensor(np.ones((4, 1, 1, 2))),
        )
        x_sc = similarity_scores(code).data
        # anchor is (1,1)/sqrt2 direction: every row scores cos 45 deg
        np.testing.assert_allclose(x_sc[:, 0], np.full(4, 1 / np.sqrt(2)), atol=1e-12)

    def test_matches_per_row_oracle(self):
        rng = np.random.default_rng(0)
        code = random_code(rng, 3)
        x_sc = similarity_scores(code).data
        tex, strf = code.z_tex.data, code.z_str.data.reshape(3, -1)
        for i in range(3):
            for col, mat in ((0, tex), (1, strf)):
                anchor = mat.mean(axis=0)
                expect = mat[i] @ anchor / (np.linalg.norm(mat[i]) * np.linalg.norm(anchor))
                assert x_sc[i, col] == pytest.approx(expect, abs=1e-12)

    def test_empty_batch_rejected(self):
        code = LatentCode(z_tex=Tensor(np.zeros((0, 3))), z_str=Tensor(np.zeros((0, 1, 2, 2))))
        with pytest.raises(ValueError, match="at least one"):
            similarity_scores(code)

    def test_single_sample_scores_ones(self):
        rng = np.random.default_rng(1)
        x_sc = similarity_scores(random_code(rng, 1)).data
        np.testing.assert_allclose(x_sc, [[1.0, 1.0]], atol=1e-15)

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x_sc = similarity_scores(random_code(rng, int(rng.integers(2, 9)))).data
            assert np.all(x_sc >= -1.0 - 1e-12) and np.all(x_sc <= 1.0 + 1e-12)


class TestBuildAdjacency:
    def test_orthogonal_rows(self):
        a_hat, d_hat = build_adjacency(Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])))
        np.testing.assert_array_equal(a_hat.data, np.eye(2))
        np.testing.assert_array_equal(d_hat.data, [1.0, 1.0])

    def test_identical_rows(self):
        a_hat, d_hat = build_adjacency(Tensor(np.array([[1.0, 1.0], [1.0, 1.0]])))
        np.testing.assert_array_equal(a_hat.data, [[1.0, 2.0], [2.0, 1.0]])
        np.testing.assert_array_equal(d_hat.data, [3.0, 3.0])

    def test_negative_affinity_clamped(self):
        a_hat, d_hat = build_adjacency(Tensor(np.array([[1.0, 0.0], [-1.0, 0.0]])))
        np.testing.assert_array_equal(a_hat.data, np.eye(2))
        np.testing.assert_array_equal(d_hat.data, [1.0, 1.0])

    def test_symmetry_exact(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x_sc = rng.uniform(-1, 1, (int(rng.integers(2, 10)), 2))
            a_hat, _ = build_adjacency(Tensor(x_sc))
            np.testing.assert_array_equal(a_hat.data, a_hat.data.T)

    def test_degrees_at_least_one(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            x_sc = rng.uniform(-1, 1, (int(rng.integers(1, 12)), 2))
            _, d_hat = build_adjacency(Tensor(x_sc))
            assert np.all(d_hat.data >= 1.0)

    def test_gram_product_is_psd(self):
        rng = np.random.default_rng(5)
        x_sc = rng.uniform(-1, 1, (8, 2))
        m = x_sc @ x_sc.T
        for _ in range(1000):
            v = rng.standard_normal(8)
            assert v @ m @ v >= -1e-10


class TestNormalizeAdjacency:
    def test_identity_graph(self):
        s = normalize_adjacency(Tensor(np.eye(3)), Tensor(np.ones(3)))
        np.testing.assert_array_equal(s.data, np.eye(3))

    def test_hand_computed(self):
        s = normalize_adjacency(
            Tensor(np.array([[1.0, 2.0], [2.0, 1.0]])), Tensor(np.array([3.0, 3.0]))
        )
        np.testing.assert_allclose(s.data, [[1 / 3, 2 / 3], [2 / 3, 1 / 3]], atol=1e-15)

    def test_row_sums_positive_and_spectrum_bounded(self):
        # degrees are exact row sums, so D^{-1} A is row-stochastic and the
        # symmetric rescaling (similar to it) has eigenvalues in [-1, 1];
        # row sums themselves stay positive but can slightly exceed 1
        rng = np.random.default_rng(6)
        for _ in range(50):
            x_sc = rng.uniform(-1, 1, (int(rng.integers(2, 12)), 2))
            a_hat, d_hat = build_adjacency(Tensor(x_sc))
            s = normalize_adjacency(a_hat, d_hat)
            assert np.all(s.data.sum(axis=1) > 0.0)
            eigs = np.linalg.eigvalsh(s.data)
            assert eigs.max() <= 1.0 + 1e-10 and eigs.min() >= -1.0 - 1e-10

    def test_symmetric_output(self):
        rng = np.random.default_rng(7)
        x_sc = rng.uniform(-1, 1, (6, 2))
        a_hat, d_hat = build_adjacency(Tensor(x_sc))
        s = normalize_adjacency(a_hat, d_hat).data
        np.testing.assert_allclose(s, s.T, atol=1e-15)

    def test_nonpositive_degree_rejected(self):
        with pytest.raises(AssertionError, match="positive"):
            normalize_adjacency(Tensor(np.eye(2)), Tensor(np.array([1.0, 0.0])))


class TestGcnLayer:
    def test_single_node_identity(self):
        x = np.array([[0.7, -0.3]])
        z = gcn_layer(Tensor(np.eye(1)), Tensor(x), Tensor(np.eye(2)), activation="none")
        np.testing.assert_array_equal(z.data, x)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            w = int(rng.integers(2, 17))
            k, c = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            x_sc = rng.uniform(-1, 1, (w, 2))
            a_hat, d_hat = build_adjacency(Tensor(x_sc))
            s = normalize_adjacency(a_hat, d_hat)
            x = rng.standard_normal((w, k))
            wt = rng.standard_normal((k, c))
            for act in ("relu", "none"):
                got = gcn_layer(s, Tensor(x), Tensor(wt), activation=act).data
                want = dense_gcn_oracle(s.data, x, wt, act)
                np.testing.assert_allclose(got, want, atol=1e-10)

    def test_identity_propagation_is_linear(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 3))
        wt = rng.standard_normal((3, 2))
        z = gcn_layer(Tensor(np.eye(4)), Tensor(x), Tensor(wt), activation="none")
        np.testing.assert_allclose(z.data, x @ wt, atol=1e-12)

    def test_dimension_errors(self):
        with pytest.raises(ValueError, match="nodes"):
            gcn_layer(Tensor(np.eye(3)), Tensor(np.zeros((2, 2))), Tensor(np.eye(2)))
        with pytest.raises(ValueError, match="feature width"):
            gcn_layer(Tensor(np.eye(2)), Tensor(np.zeros((2, 3))), Tensor(np.eye(2)))
        with pytest.raises(ValueError, match="activation"):
            gcn_layer(Tensor(np.eye(2)), Tensor(np.zeros((2, 2))), Tensor(np.eye(2)),
                      activation="tanh")


class TestGcnForward:
    def test_output_shape(self):
        rng = np.random.default_rng(10)
        code = random_code(rng, 5)
        stack = GcnStack(k=8, hidden=6, out=3, rng=rng)
        z = gcn_forward(stack, build_graph(code))
        assert z.shape == (5, 3)

    def test_zero_features_zero_embeddings(self):
        rng = np.random.default_rng(11)
        graph = build_graph(random_code(rng, 4))
        graph.x = Tensor(np.zeros((4, 8)))
        stack = GcnStack(k=8, hidden=5, out=3, rng=rng)
        np.testing.assert_array_equal(gcn_forward(stack, graph).data, np.zeros((4, 3)))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(12)
        for trial in range(10):
            w = int(rng.integers(3, 10))
            code = random_code(rng, w)
            stack = GcnStack(k=8, hidden=6, out=4, rng=np.random.default_rng(trial))
            base = gcn_forward(stack, build_graph(code)).data
            perm = rng.permutation(w)
            permuted = LatentCode(
                z_tex=Tensor(code.z_tex.data[perm]),
                z_str=Tensor(code.z_str.data[perm]),
            )
            shuffled = gcn_forward(stack, build_graph(permuted)).data
            np.testing.assert_allclose(shuffled, base[perm], atol=1e-10)

    def test_shared_params_same_object(self):
        rng = np.random.default_rng(13)
        stack = GcnStack(k=8, hidden=4, out=2, rng=rng)
        g1 = build_graph(random_code(rng, 3))
        g2 = build_graph(random_code(rng, 5))
        # one stack drives graphs of different sizes with the same weights
        z1, z2 = gcn_forward(stack, g1), gcn_forward(stack, g2)
        assert z1.shape == (3, 2) and z2.shape == (5, 2)


class TestGradients:
    def test_gcn_layer_wrt_features_and_weight(self):
        rng = np.random.default_rng(14)
        s_np = normalize_adjacency(*build_adjacency(Tensor(rng.uniform(-1, 1, (4, 2))))).data
        x = Tensor(rng.standard_normal((4, 3)))
        wt = Tensor(rng.standard_normal((3, 2)))
        assert finite_diff_check(
            lambda t: gcn_layer(Tensor(s_np), t, wt, activation="none").sum(), x
        ) < TOL
        assert finite_diff_check(
            lambda t: (gcn_layer(Tensor(s_np), x, t, activation="none")
                       * gcn_layer(Tensor(s_np), x, t, activation="none")).mean(), wt
        ) < TOL

    def test_full_pipeline_wrt_codes(self):
        rng = np.random.default_rng(15)
        w = 4
        z_str = Tensor(rng.standard_normal((w, 1, 2, 2)))
        stack = GcnStack(k=7, hidden=5, out=2, rng=rng)

        def pipeline(z_tex_t):
            code = LatentCode(z_tex=z_tex_t, z_str=z_str)
            return (gcn_forward(stack, build_graph(code))
                    * gcn_forward(stack, build_graph(code))).mean()

        z_tex = Tensor(rng.standard_normal((w, 3)))
        assert finite_diff_check(pipeline, z_tex) < TOL

    def test_adjacency_construction_differentiable(self):
        rng = np.random.default_rng(16)
        x_sc = Tensor(rng.uniform(-0.9, 0.9, (5, 2)))

        def f(t):
            a_hat, d_hat = build_adjacency(t)
            return normalize_adjacency(a_hat, d_hat).sum()

        assert finite_diff_check(f, x_sc) < TOL

    def test_gradient_reaches_codes_through_graph(self):
        rng = np.random.default_rng(17)
        z_tex = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        z_str = Tensor(rng.standard_normal((3, 1, 2, 2)), requires_grad=True)
        stack = GcnStack(k=8, hidden=4, out=2, rng=rng)
        with Tape() as tape:
            code = LatentCode(z_tex=z_tex, z_str=z_str)
            loss = gcn_forward(stack, build_graph(code)).mean()
        tape.backward(loss)
        assert z_tex.grad is not None and np.abs(z_tex.grad).max() > 0
        assert z_str.grad is not None and np.abs(z_str.grad).max() > 0


class TestNodeFeatures:
    def test_concatenation_layout(self):
        rng = np.random.default_rng(18)
        code = random_code(rng, 3, d_tex=4, str_shape=(1, 2, 2))
        x = node_features(code).data
        assert x.shape == (3, 8)
        np.testing.assert_array_equal(x[:, :4], code.z_tex.data)
        np.testing.assert_array_equal(x[:, 4:], code.z_str.data.reshape(3, -1))
