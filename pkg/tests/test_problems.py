import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sumlab.problems import (
    Dataset,
    IndexStream,
    TinyMLP,
    draw_test_set,
    estimate_constants,
    generate_dataset,
    make_problem,
    make_quadratic,
    make_sigmoid_regression,
    make_tiny_mlp,
    quadratic_from_centers,
    sigmoid_loss_curvature,
)


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.fixture(scope="module")
def mlp():
    return make_tiny_mlp(60, 5, 8, 3, seed=2)


class TestQuadratic:
    def test_two_centre_example(self):
        p = quadratic_from_centers([[0.0], [2.0]])
        np.testing.assert_allclose(p.minimizer, [1.0])
        np.testing.assert_allclose(p.full_grad(np.array([1.0])), [0.0], atol=1e-15)
        np.testing.assert_allclose(p.full_grad(np.array([0.0])), [-1.0], atol=1e-15)
        assert p.point_variance(np.array([1.0])) == pytest.approx(1.0)
        assert p.f_star == pytest.approx(0.5)

    def test_constants(self):
        p = make_quadratic(4, seed=1)
        c = estimate_constants(p, 100, seed=0)
        assert c.L == 1.0
        q = quadratic_from_centers([[0.0], [2.0]])
        assert estimate_constants(q, 100, seed=0).sigma2 == pytest.approx(1.0, rel=1e-12)

    def test_rejects_bad_dimension(self):
        with pytest.raises(ValueError):
            make_quadratic(0, seed=0)


class TestSigmoidRegression:
    def test_gradient_at_origin(self):
        p = make_sigmoid_regression(10, 3, seed=0)
        i = int(np.flatnonzero(p.dataset.labels == 0)[0])
        np.testing.assert_allclose(p.example_grad(np.zeros(3), i), 0.25 * p.dataset.features[i], atol=1e-15)

    def test_zero_residual_gives_zero_gradient(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        ds = Dataset(a, np.array([0.5, 0.5]), 0, 5.0, "sigreg")
        p = make_sigmoid_regression(4, 2, 0).with_dataset(ds)
        np.testing.assert_array_equal(p.example_grad(np.zeros(2), 0), [0.0, 0.0])

    def test_curvature_constant(self):
        # brute force over a fine grid of z for both labels
        z = np.linspace(-12, 12, 400001)
        u = 1 / (1 + np.exp(-z))
        h0 = 2 * u * u * (1 - u) * (2 - 3 * u)
        assert np.max(np.abs(h0)) == pytest.approx(sigmoid_loss_curvature(), rel=1e-8)
        assert sigmoid_loss_curvature() == pytest.approx(0.15406, abs=1e-5)

    def test_gradient_bound_holds(self):
        p = make_sigmoid_regression(200, 10, seed=3)
        rng = np.random.default_rng(0)
        G = p.constants.G
        worst = 0.0
        for _ in range(500):
            x = rng.normal(scale=rng.choice([0.1, 1.0, 10.0]), size=10)
            worst = max(worst, float(np.max(np.linalg.norm(p.example_grads(x), axis=1))))
        assert worst <= G
        assert G == 2.5

    def test_feature_clamp(self):
        p = make_sigmoid_regression(500, 40, seed=0)
        assert np.max(np.linalg.norm(p.dataset.features, axis=1)) <= 5.0 + 1e-12

    def test_label_noise_rate(self):
        p = make_sigmoid_regression(4000, 5, seed=0)
        a, b = p.dataset.features, p.dataset.labels
        side = (a.sum(axis=1) > 0).astype(float)
        assert 0.05 < np.mean(side != b) < 0.2


class TestTinyMLP:
    def test_finite_differences(self, mlp):
        rng = np.random.default_rng(7)
        for _ in range(10):
            x = rng.normal(scale=0.5, size=mlp.dim)
            fd = central_difference(mlp.loss, x)
            assert rel_err(mlp.full_grad(x), fd) <= 1e-6
            i = int(rng.integers(mlp.n))
            fd_i = central_difference(lambda z: float(mlp.example_losses(z)[i]), x)
            assert rel_err(mlp.example_grad(x, i), fd_i) <= 1e-6

    def test_zero_network_is_uniform(self, mlp):
        assert mlp.loss(np.zeros(mlp.dim)) == pytest.approx(math.log(3), rel=1e-12)

    def test_duplicate_examples_share_gradients(self, mlp):
        ds = mlp.dataset.with_example(1, mlp.dataset.features[0], mlp.dataset.labels[0])
        p = mlp.with_dataset(ds)
        x = p.initial_point(0)
        np.testing.assert_array_equal(p.example_grad(x, 0), p.example_grad(x, 1))

    def test_penalty_is_on_weights_only(self, mlp):
        x = np.zeros(mlp.dim)
        W1, b1, W2, b2 = mlp.unpack(np.arange(mlp.dim, dtype=float))
        assert W1.shape == (8, 5) and b2.shape == (3,)
        x[-1] = 3.0  # an output bias
        unpen = TinyMLP(mlp.dataset, 8, 3, weight_decay=0.0)
        assert mlp.loss(x) == pytest.approx(unpen.loss(x), rel=1e-15)
        w = np.zeros(mlp.dim)
        w[0] = 2.0  # W1[0, 0]; with W2 = 0 the cross-entropy stays ln 3
        assert mlp.loss(w) == pytest.approx(math.log(3) + 0.5 * 0.0005 * 4.0, rel=1e-12)

    @pytest.mark.parametrize("kwargs", [dict(hidden=65), dict(classes=11), dict(classes=1)])
    def test_size_limits(self, mlp, kwargs):
        args = dict(hidden=8, classes=3) | kwargs
        with pytest.raises(ValueError):
            TinyMLP(mlp.dataset, **args)

    def test_wrong_parameter_length(self, mlp):
        with pytest.raises(ValueError):
            mlp.loss(np.zeros(mlp.dim + 1))


class TestOracles:
    @pytest.mark.parametrize("kind", ["quadratic", "sigreg", "mlp"])
    def test_unbiased(self, kind):
        p = make_problem(kind, 50, 4, seed=1, hidden=6)
        rng = np.random.default_rng(1)
        for _ in range(5):
            x = rng.normal(size=p.dim)
            mean = np.mean([p.example_grad(x, i) for i in range(p.n)], axis=0)
            assert rel_err(mean, p.full_grad(x)) <= 1e-12

    @pytest.mark.parametrize("kind", ["quadratic", "sigreg"])
    def test_finite_differences(self, kind):
        p = make_problem(kind, 30, 4, seed=5)
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.normal(size=p.dim)
            assert rel_err(p.full_grad(x), central_difference(p.loss, x)) <= 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_problem("cnn", 10, 2, 0)


class TestDatasets:
    @pytest.mark.parametrize("kind", ["quadratic", "sigreg", "mlp"])
    def test_text_round_trip(self, kind, tmp_path):
        ds = make_problem(kind, 25, 3, seed=9).dataset
        ds.save(tmp_path / "d.txt")
        back = Dataset.load(tmp_path / "d.txt")
        assert back == ds
        assert back.to_text() == ds.to_text()
        assert ds.to_text().splitlines()[0] == f"25 3 9 5.0 {kind}"

    def test_same_seed_same_bytes(self):
        a = make_sigmoid_regression(40, 3, seed=4).dataset.to_text()
        b = make_sigmoid_regression(40, 3, seed=4).dataset.to_text()
        c = make_sigmoid_regression(40, 3, seed=5).dataset.to_text()
        assert a == b and a != c

    @pytest.mark.parametrize("text,line", [
        ("2 1 0 5.0\n1.0 0\n2.0 1\n", "line 1"),
        ("2 1 0 5.0 sigreg\n1.0 0\n2.0\n", "line 3"),
        ("3 1 0 5.0 sigreg\n1.0 0\n2.0 1\n", "n=3"),
    ])
    def test_parse_errors_name_the_line(self, text, line):
        with pytest.raises(ValueError, match=line):
            Dataset.from_text(text)

    def test_needs_two_examples(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((1, 2)), np.zeros(1), 0, 5.0, "sigreg")

    def test_test_set_comes_from_same_distribution(self):
        p = make_tiny_mlp(400, 4, 8, 3, seed=0)
        a, b = draw_test_set(p, 400, seed=1)
        assert a.shape == (400, 4)
        np.testing.assert_allclose(a.mean(axis=0), p.dataset.features.mean(axis=0), atol=0.4)
        assert set(np.unique(b)) == {0, 1, 2}


class TestIndexStream:
    def test_deterministic(self):
        np.testing.assert_array_equal(IndexStream(10, 3).take(5000), IndexStream(10, 3).take(5000))

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 50), seed=st.integers(0, 2**63))
    def test_in_range(self, n, seed):
        idx = IndexStream(n, seed).take(300)
        assert idx.min() >= 0 and idx.max() < n

    def test_roughly_uniform(self):
        counts = np.bincount(IndexStream(5, 0).take(50_000), minlength=5)
        assert np.all(np.abs(counts / 50_000 - 0.2) < 0.01)


class TestEstimateConstants:
    def test_needs_enough_samples(self):
        with pytest.raises(ValueError):
            estimate_constants(make_quadratic(2, 0), 99, 0)

    def test_degenerate_region(self):
        with pytest.raises(ValueError):
            estimate_constants(make_quadratic(2, 0), 100, 0, radius=0.0)

    def test_sigmoid_estimates_below_analytic(self):
        p = make_sigmoid_regression(100, 5, seed=0)
        c = estimate_constants(p, 100, seed=0, radius=3.0)
        assert c.G <= p.constants.G and c.sigma2 <= p.constants.sigma2
        assert c.L == p.constants.L

    def test_mlp_sampled_smoothness_is_positive(self, mlp):
        c = estimate_constants(mlp, 100, seed=0)
        assert c.L > 0 and not c.L_is_analytic
        assert c.G > 0 and c.sigma2 > 0

    def test_generated_dataset_records_generator(self):
        ds = generate_dataset(make_quadratic(3, 0).dataset.source, 10, seed=0)
        assert ds.kind == "quadratic" and ds.R == 5.0
