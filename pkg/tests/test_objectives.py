import numpy as np
import pytest

from cflsim.errors import UnboundedObjectiveError
from cflsim.objectives import (
    LeastSquaresObjective,
    QuadraticObjective,
    SampleSet,
    build_quadratic,
    canonical_quadratic,
    exact_optimum,
    fit_least_squares,
    flat_direction_component,
    gradient,
    hessian,
    loss_metric,
    objective_value,
)


def finite_difference_gradient(obj, w, h=1e-6):
    """Central-difference oracle, independent of the analytic path."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    for i in range(w.shape[0]):
        up = w.copy()
        dn = w.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (objective_value(obj, up) - objective_value(obj, dn)) / (2 * h)
    return out


def random_samples(rng, n=40, dim=6):
    feats = rng.standard_normal((n, dim))
    w_true = rng.standard_normal(dim)
    targets = feats @ w_true + 0.05 * rng.standard_normal(n)
    return SampleSet(features=feats, targets=targets)


class TestGradient:
    def test_quadratic_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        quad = build_quadratic(6, 0.5, 4.0, 11)
        for _ in range(5):
            w = rng.standard_normal(6) * 3
            fd = finite_difference_gradient(quad, w)
            assert np.allclose(gradient(quad, w), fd, rtol=1e-5, atol=1e-5)

    def test_least_squares_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        obj = fit_least_squares(random_samples(rng))
        for _ in range(5):
            w = rng.standard_normal(6)
            fd = finite_difference_gradient(obj, w)
            assert np.allclose(gradient(obj, w), fd, rtol=1e-5, atol=1e-5)

    def test_gradient_is_twice_hessian_halved(self):
        # gradient(w) - gradient(0) == hessian @ w for a pure quadratic
        quad = build_quadratic(5, 1.0, 5.0, 3)
        w = np.arange(5.0)
        assert np.allclose(gradient(quad, w) - gradient(quad, np.zeros(5)), hessian(quad) @ w)


class TestBuildQuadratic:
    def test_spectrum_endpoints_pinned(self):
        quad = build_quadratic(10, 1.0, 5.0, 0)
        eig = np.linalg.eigvalsh(quad.a)
        assert eig[0] == pytest.approx(1.0, abs=1e-12)
        assert eig[-1] == pytest.approx(5.0, abs=1e-12)
        assert np.all(eig >= 1.0 - 1e-12)
        assert np.all(eig <= 5.0 + 1e-12)

    def test_zero_mu_allowed(self):
        quad = build_quadratic(8, 0.0, 5.0, 1)
        eig = np.linalg.eigvalsh(quad.a)
        assert eig[0] == pytest.approx(0.0, abs=1e-12)

    def test_deterministic_per_seed(self):
        a = build_quadratic(6, 1.0, 5.0, 42)
        b = build_quadratic(6, 1.0, 5.0, 42)
        c = build_quadratic(6, 1.0, 5.0, 43)
        assert np.array_equal(a.a, b.a)
        assert np.array_equal(a.b, b.b)
        assert not np.array_equal(a.a, c.a)

    def test_symmetric(self):
        quad = build_quadratic(12, 0.1, 9.0, 5)
        assert np.allclose(quad.a, quad.a.T)


class TestExactOptimum:
    def test_gradient_vanishes_at_optimum(self):
        quad = build_quadratic(9, 0.7, 6.0, 2)
        w_star = exact_optimum(quad)
        assert np.linalg.norm(gradient(quad, w_star)) < 1e-9

    def test_unbounded_when_null_mode_forced(self):
        # forcing along a zero-curvature direction leaves nothing to converge to
        quad = QuadraticObjective(
            a=np.diag([0.0, 1.0, 2.0]), b=np.array([0.5, 1.0, 1.0]), c=0.0, mu=0.0, lmax=2.0
        )
        with pytest.raises(UnboundedObjectiveError):
            exact_optimum(quad)

    def test_generated_flat_quadratic_keeps_attainable_optimum(self):
        # the generator strips forcing along the pinned flat direction
        quad = build_quadratic(6, 0.0, 4.0, 9)
        w_star = exact_optimum(quad)
        assert np.linalg.norm(gradient(quad, w_star)) < 1e-9

    def test_flat_direction_component_matches_hand_value(self):
        quad = QuadraticObjective(
            a=np.diag([0.0, 1.0, 2.0]), b=np.zeros(3), c=0.0, mu=0.0, lmax=2.0
        )
        part = flat_direction_component(quad, np.array([3.0, 4.0, 5.0]))
        assert np.allclose(part, [3.0, 0.0, 0.0], atol=1e-12)

    def test_flat_direction_component_zero_when_strictly_convex(self):
        quad = build_quadratic(5, 0.5, 4.0, 11)
        part = flat_direction_component(quad, np.ones(5))
        assert np.allclose(part, 0.0, atol=1e-12)

    def test_flat_direction_component_rejects_bad_shape(self):
        quad = build_quadratic(5, 0.5, 4.0, 11)
        with pytest.raises(ValueError):
            flat_direction_component(quad, np.ones(4))

    def test_least_squares_agrees_with_lstsq(self):
        rng = np.random.default_rng(13)
        samples = random_samples(rng, n=60)
        obj = fit_least_squares(samples)
        w_star = exact_optimum(obj)
        direct, *_ = np.linalg.lstsq(samples.features, samples.targets, rcond=None)
        assert np.allclose(w_star, direct, atol=1e-8)


class TestCanonicalQuadratic:
    def test_least_squares_coefficients(self):
        rng = np.random.default_rng(21)
        samples = random_samples(rng, n=30)
        quad = canonical_quadratic(fit_least_squares(samples))
        n = samples.features.shape[0]
        x, y = samples.features, samples.targets
        assert np.allclose(quad.a, x.T @ x / n)
        assert np.allclose(quad.b, -2.0 * x.T @ y / n)
        assert quad.c == pytest.approx(float(y @ y) / n)

    def test_quadratic_passthrough(self):
        quad = build_quadratic(4, 1.0, 2.0, 0)
        assert canonical_quadratic(quad) is quad


def test_loss_metric_is_gradient_norm():
    quad = build_quadratic(7, 0.5, 3.0, 4)
    w = np.linspace(-1, 1, 7)
    assert loss_metric(quad, w) == pytest.approx(float(np.linalg.norm(gradient(quad, w))))


def test_objective_value_least_squares_is_mean_squared_residual():
    rng = np.random.default_rng(30)
    samples = random_samples(rng, n=25)
    obj = fit_least_squares(samples)
    w = rng.standard_normal(6)
    resid = samples.features @ w - samples.targets
    assert objective_value(obj, w) == pytest.approx(float(resid @ resid) / 25)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        QuadraticObjective(
            a=np.eye(3), b=np.zeros(2), c=0.0, mu=1.0, lmax=1.0
        )
    with pytest.raises(ValueError):
        QuadraticObjective(
            a=np.array([[1.0, 2.0], [0.0, 1.0]]), b=np.zeros(2), c=0.0, mu=1.0, lmax=1.0
        )


def test_least_squares_needs_matching_shapes():
    with pytest.raises(ValueError):
        SampleSet(features=np.ones((4, 3)), targets=np.ones(5))
