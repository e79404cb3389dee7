import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from bffg.errors import NumericalError, ShapeError, UnsupportedPairingError
from bffg.spaces import (
    ONE,
    DiracMass,
    DiscreteMeasure,
    DiscreteVec,
    Euclidean,
    Finite,
    GaussianQuadratic,
    Product,
    ProductMeasure,
    ProductPotential,
    WeightedGaussian,
    evaluate,
    flat_index,
    flatten_potential,
    integrate,
    log_evaluate,
    multiply_potentials,
    normalize,
    tensor_potential,
    total_mass,
    unflatten_index,
    validate_point,
)

from conftest import seeds


class TestSpaces:
    @pytest.mark.parametrize("bad", [lambda: Finite(0), lambda: Euclidean(0), lambda: Product(Finite(2))])
    def test_rejects_degenerate(self, bad):
        with pytest.raises(ValueError):
            bad()

    def test_structural_equality(self):
        assert Product(Finite(2), Euclidean(3)) == Product([Finite(2), Euclidean(3)])
        assert Finite(2) != Finite(3)
        assert Finite(1) != Euclidean(1)

    @pytest.mark.parametrize(
        "space, point",
        [
            (Finite(3), 3),
            (Finite(3), -1),
            (Finite(3), 1.0),
            (Euclidean(2), np.zeros(3)),
            (Euclidean(2), np.array([0.0, np.nan])),
            (Product(Finite(2), Finite(2)), (0,)),
            (Product(Finite(2), Finite(2)), 0),
        ],
    )
    def test_invalid_points(self, space, point):
        with pytest.raises(ShapeError):
            validate_point(space, point)

    @given(st.lists(st.integers(1, 4), min_size=2, max_size=4), seeds)
    def test_flat_index_roundtrip(self, sizes, seed):
        space = Product([Finite(n) for n in sizes])
        for i in range(math.prod(sizes)):
            assert flat_index(space, unflatten_index(space, i)) == i

    def test_flat_index_is_row_major(self):
        space = Product(Finite(2), Finite(3))
        assert [unflatten_index(space, i) for i in range(6)] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


class TestPotentials:
    def test_evaluate_examples(self):
        assert evaluate(ONE, 7) == 1.0
        assert evaluate(ONE, np.zeros(4)) == 1.0
        assert evaluate(DiscreteVec([0.2, 0.8]), 1) == 0.8
        g = GaussianQuadratic(0.0, np.zeros(1), np.eye(1))
        assert evaluate(g, np.array([2.0])) == pytest.approx(math.exp(-2), rel=1e-15)

    def test_discrete_vec_invariants(self):
        with pytest.raises(ValueError):
            DiscreteVec([0.0, 0.0])
        with pytest.raises(ValueError):
            DiscreteVec([0.5, -0.1])

    def test_gaussian_quadratic_symmetrizes(self):
        H = np.array([[1.0, 0.5 + 1e-12], [0.5, 2.0]])
        g = GaussianQuadratic(0.0, np.zeros(2), H)
        assert np.array_equal(g.H, g.H.T)
        with pytest.raises(ValueError):
            GaussianQuadratic(0.0, np.zeros(2), np.array([[1.0, 0.6], [0.5, 2.0]]))
        with pytest.raises(ValueError):
            GaussianQuadratic(math.inf, np.zeros(1), np.eye(1))

    def test_rank_deficient_H_allowed(self):
        g = GaussianQuadratic(0.0, np.zeros(2), np.diag([1.0, 0.0]))
        assert evaluate(g, np.array([0.0, 100.0])) == 1.0

    def test_tensor_examples(self):
        assert tensor_potential(ONE, ONE) is ONE
        g = tensor_potential(DiscreteVec([1.0, 0.0]), DiscreteVec([0.5, 0.5]))
        assert evaluate(g, (0, 1)) == 0.5
        g = tensor_potential(DiscreteVec([2.0, 1.0]), DiscreteVec([1.0, 3.0]))
        assert evaluate(g, (0, 1)) == 6.0

    @given(seeds)
    def test_tensor_associative(self, seed):
        rng = np.random.default_rng(seed)
        g1, g2, g3 = (DiscreteVec(rng.uniform(0.1, 2.0, size=3)) for _ in range(3))
        x, y, z = rng.integers(3, size=3)
        left = evaluate(tensor_potential(g1, tensor_potential(g2, g3)), (x, (y, z)))
        right = evaluate(tensor_potential(tensor_potential(g1, g2), g3), ((x, y), z))
        assert left == pytest.approx(right, rel=1e-12)

    def test_flatten_product_potential(self):
        space = Product(Finite(2), Finite(3))
        g = ProductPotential(DiscreteVec([1.0, 2.0]), DiscreteVec([1.0, 0.5, 0.25]))
        flat = flatten_potential(g, space)
        for i in range(6):
            assert flat.values[i] == evaluate(g, unflatten_index(space, i))

    def test_flatten_gaussian_product(self, rng):
        space = Product(Euclidean(1), Euclidean(2))
        g = ProductPotential(
            GaussianQuadratic(0.3, rng.normal(size=1), np.eye(1)),
            GaussianQuadratic(-0.2, rng.normal(size=2), np.eye(2) * 0.5),
        )
        flat = flatten_potential(g, space)
        x = (rng.normal(size=1), rng.normal(size=2))
        assert flat.dimension == 3
        assert log_evaluate(flat, x) == pytest.approx(log_evaluate(g, x), rel=1e-13)

    def test_multiply(self):
        a = DiscreteVec([1.0, 2.0])
        b = DiscreteVec([3.0, 0.5])
        assert_allclose(multiply_potentials(a, b).values, [3.0, 1.0])
        assert multiply_potentials(ONE, a) is a


class TestMeasures:
    def test_total_mass_examples(self):
        assert total_mass(DiracMass(3, 1.0)) == 1.0
        assert total_mass(DiscreteMeasure([0.2, 0.3])) == pytest.approx(0.5)
        assert total_mass(ProductMeasure(DiscreteMeasure([0.5, 0.5]), WeightedGaussian(1.0, np.zeros(1), np.eye(1)))) == 1.0

    def test_invariants(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([0.5, -0.5])
        with pytest.raises(ValueError):
            WeightedGaussian(1.0, np.zeros(2), np.diag([1.0, -1.0]))
        with pytest.raises(ValueError):
            WeightedGaussian(-1.0, np.zeros(1), np.eye(1))
        WeightedGaussian(1.0, np.zeros(2), np.zeros((2, 2)))  # PSD, not PD: allowed

    def test_normalize(self):
        mu = normalize(DiscreteMeasure([1.0, 3.0]))
        assert_allclose(mu.weights, [0.25, 0.75])
        with pytest.raises(NumericalError):
            normalize(DiscreteMeasure([0.0, 0.0]))


class TestIntegrate:
    def test_examples(self):
        assert integrate(DiscreteMeasure([0.5, 0.5]), DiscreteVec([1.0, 0.0])) == 0.5
        assert integrate(WeightedGaussian(1.0, np.zeros(3), np.eye(3)), ONE) == 1.0
        g = GaussianQuadratic(0.0, np.zeros(1), np.eye(1))
        assert integrate(WeightedGaussian(1.0, np.zeros(1), np.eye(1)), g) == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_dirac(self):
        assert integrate(DiracMass(1, 2.0), DiscreteVec([0.1, 0.4])) == pytest.approx(0.8)

    def test_gaussian_against_quadrature(self):
        from scipy import integrate as quad

        mu = WeightedGaussian(2.5, np.array([0.3]), np.array([[0.7]]))
        g = GaussianQuadratic(0.2, np.array([0.4]), np.array([[0.9]]))

        def f(y):
            dens = math.exp(-0.5 * (y - 0.3) ** 2 / 0.7) / math.sqrt(2 * math.pi * 0.7)
            return 2.5 * dens * math.exp(0.2 + 0.4 * y - 0.45 * y * y)

        ref, _ = quad.quad(f, -30, 30, epsabs=1e-13, epsrel=1e-13)
        assert integrate(mu, g) == pytest.approx(ref, rel=1e-10)

    def test_degenerate_covariance(self):
        # a zero covariance is a point mass at the mean
        g = GaussianQuadratic(0.0, np.array([1.0, 0.0]), np.eye(2))
        x = np.array([0.5, -1.0])
        mu = WeightedGaussian(1.0, x, np.zeros((2, 2)))
        assert integrate(mu, g) == pytest.approx(evaluate(g, x), rel=1e-13)

    def test_divergent_integral(self):
        g = GaussianQuadratic(0.0, np.zeros(1), -np.eye(1) * 2)
        with pytest.raises(NumericalError):
            integrate(WeightedGaussian(1.0, np.zeros(1), np.eye(1)), g)

    def test_product_needs_product_potential(self):
        mu = ProductMeasure(DiscreteMeasure([0.5, 0.5]), DiscreteMeasure([0.5, 0.5]))
        with pytest.raises(UnsupportedPairingError):
            integrate(mu, DiscreteVec([1.0, 1.0, 1.0, 1.0]))

    @given(seeds)
    def test_bounded_by_sup(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        mu = DiscreteMeasure(rng.dirichlet(np.ones(n)))
        h = DiscreteVec(rng.uniform(0, 3, size=n) + 1e-3)
        assert 0.0 <= integrate(mu, h) <= h.values.max() * (1 + 1e-15)

    @given(seeds)
    def test_fubini(self, seed):
        rng = np.random.default_rng(seed)
        mu1 = DiscreteMeasure(rng.dirichlet(np.ones(3)))
        mu2 = WeightedGaussian(1.0, rng.normal(size=2), np.eye(2) * rng.uniform(0.1, 2))
        g1 = DiscreteVec(rng.uniform(0.1, 1, size=3))
        g2 = GaussianQuadratic(rng.normal(), rng.normal(size=2), np.eye(2) * rng.uniform(0, 2))
        joint = integrate(ProductMeasure(mu1, mu2), ProductPotential(g1, g2))
        assert joint == pytest.approx(integrate(mu1, g1) * integrate(mu2, g2), rel=1e-10)
