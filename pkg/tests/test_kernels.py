import math

import numpy as np
import pytest
from hypothesis import given
from numpy.testing import assert_allclose

from bffg.errors import ShapeError, SpaceMismatchError, UnsupportedPairingError
from bffg.kernels import (
    DiscreteKernel,
    DuplicationKernel,
    IdentityKernel,
    LinearGaussian,
    ObservationModel,
    SequenceKernel,
    TensorKernel,
    compose_kernels,
    observation_potential,
    pullback,
    pushforward,
    sample_discrete_row,
    sample_kernel,
    tensor_kernels,
)
from bffg.oracle import gaussian_density, quadrature_pullback_1d
from bffg.rng import RandomStream
from bffg.spaces import (
    ONE,
    DiracMass,
    DiscreteMeasure,
    DiscreteVec,
    Euclidean,
    Finite,
    GaussianQuadratic,
    One,
    Product,
    ProductMeasure,
    ProductPotential,
    WeightedGaussian,
    evaluate,
    flatten_measure,
)

from conftest import seeds, stochastic_matrices

F2, E1 = Finite(2), Euclidean(1)
FLIP = np.array([[0.9, 0.1], [0.1, 0.9]])


def lg1(B, beta, Q):
    return LinearGaussian(np.array([[B]]), np.array([beta]), np.array([[Q]]), E1, E1)


class TestConstruction:
    def test_row_tolerance(self):
        DiscreteKernel(np.array([[0.5, 0.5 + 5e-11]]))
        k = DiscreteKernel(np.array([[0.5, 0.5 + 5e-9]]))  # renormalized
        assert k.matrix.sum() == pytest.approx(1.0, abs=1e-15)
        with pytest.raises(ValueError):
            DiscreteKernel(np.array([[0.5, 0.6]]))
        with pytest.raises(ValueError):
            DiscreteKernel(np.array([[1.1, -0.1]]))

    def test_space_shape_checks(self):
        with pytest.raises(ShapeError):
            DiscreteKernel(FLIP, Finite(3), F2)

    def test_singular_Q_rejected(self):
        with pytest.raises(ValueError):
            LinearGaussian(np.eye(2), np.zeros(2), np.diag([1.0, 0.0]))

    def test_sequence_checks_adjacency(self):
        with pytest.raises(SpaceMismatchError):
            SequenceKernel(DiscreteKernel(FLIP), lg1(1, 0, 1))


class TestCompose:
    def test_identity_is_unit(self):
        k = DiscreteKernel(FLIP)
        assert compose_kernels(IdentityKernel(F2), k) is k
        assert compose_kernels(k, IdentityKernel(F2)) is k

    def test_discrete_example(self):
        k = compose_kernels(DiscreteKernel(FLIP), DiscreteKernel(FLIP))
        assert_allclose(k.matrix, [[0.82, 0.18], [0.18, 0.82]], atol=1e-15)

    def test_linear_gaussian_example(self):
        k = compose_kernels(lg1(2, 0, 1), lg1(1, 1, 1))
        assert (k.B[0, 0], k.beta[0], k.Q[0, 0]) == (2.0, 1.0, 2.0)
        k = compose_kernels(lg1(1, 1, 1), lg1(2, 0, 1))
        # B2 B1 = 2, B2 beta1 + beta2 = 2, B2 Q1 B2' + Q2 = 5
        assert (k.B[0, 0], k.beta[0], k.Q[0, 0]) == (2.0, 2.0, 5.0)

    def test_linear_gaussian_monte_carlo(self):
        rng = np.random.default_rng(1)
        x1 = 2 * 0.0 + rng.normal(size=10**6)
        x2 = x1 + 1 + rng.normal(size=10**6)
        k = compose_kernels(lg1(2, 0, 1), lg1(1, 1, 1))
        assert abs(x2.mean() - k.beta[0]) < 4 * math.sqrt(k.Q[0, 0] / 1e6)
        assert x2.var() == pytest.approx(k.Q[0, 0], rel=0.01)

    def test_mixed_families_degrade(self):
        dup = DuplicationKernel(F2)
        k = compose_kernels(DiscreteKernel(FLIP), dup)
        assert isinstance(k, SequenceKernel)
        assert k.target == Product(F2, F2)

    def test_space_mismatch(self):
        with pytest.raises(SpaceMismatchError):
            compose_kernels(DiscreteKernel(FLIP), lg1(1, 0, 1))

    @given(seeds)
    def test_chapman_kolmogorov(self, seed):
        rng = np.random.default_rng(seed)
        k1 = DiscreteKernel(rng.dirichlet(np.ones(3), size=2))
        k2 = DiscreteKernel(rng.dirichlet(np.ones(4), size=3))
        mu = DiscreteMeasure(rng.dirichlet(np.ones(2)))
        h = DiscreteVec(rng.uniform(0.1, 1, size=4))
        k12 = compose_kernels(k1, k2)
        assert_allclose(pushforward(k12, mu).weights, pushforward(k2, pushforward(k1, mu)).weights, atol=1e-12)
        assert_allclose(pullback(k12, h).values, pullback(k1, pullback(k2, h)).values, atol=1e-12)


class TestTensor:
    def test_identity(self):
        k = tensor_kernels(IdentityKernel(F2), IdentityKernel(E1))
        assert isinstance(k, IdentityKernel) and k.source == Product(F2, E1)

    def test_kronecker_example(self):
        k = tensor_kernels(DiscreteKernel(np.eye(2)), DiscreteKernel(np.full((2, 2), 0.5)))
        expected = np.array([[0.5, 0.5, 0, 0], [0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5], [0, 0, 0.5, 0.5]])
        assert_allclose(k.matrix, expected)
        assert k.source == Product(F2, F2)

    def test_block_diagonal(self):
        k = tensor_kernels(lg1(2, 1, 3), lg1(4, 5, 6))
        assert_allclose(k.B, np.diag([2.0, 4.0]))
        assert_allclose(k.beta, [1.0, 5.0])
        assert_allclose(k.Q, np.diag([3.0, 6.0]))

    def test_mixed_family(self):
        k = tensor_kernels(DiscreteKernel(FLIP), lg1(1, 0, 1))
        assert isinstance(k, TensorKernel)

    @given(stochastic_matrices(), stochastic_matrices())
    def test_rows_sum_to_one(self, a, b):
        k = tensor_kernels(DiscreteKernel(a), DiscreteKernel(b))
        assert_allclose(k.matrix.sum(axis=1), 1.0, atol=1e-12)

    @given(seeds)
    def test_pushforward_exchange(self, seed):
        rng = np.random.default_rng(seed)
        k1, k2 = DiscreteKernel(rng.dirichlet(np.ones(3), size=2)), DiscreteKernel(rng.dirichlet(np.ones(2), size=3))
        mu1, mu2 = DiscreteMeasure(rng.dirichlet(np.ones(2))), DiscreteMeasure(rng.dirichlet(np.ones(3)))
        k = tensor_kernels(k1, k2)
        joint = pushforward(k, ProductMeasure(mu1, mu2))
        separate = ProductMeasure(pushforward(k1, mu1), pushforward(k2, mu2))
        assert_allclose(
            flatten_measure(joint, k.target).weights, flatten_measure(separate, k.target).weights, atol=1e-12
        )


class TestPushforward:
    def test_examples(self):
        mu = DiscreteMeasure([0.3, 0.7])
        assert pushforward(IdentityKernel(F2), mu) is mu
        assert_allclose(pushforward(DiscreteKernel(FLIP), DiscreteMeasure([1.0, 0.0])).weights, [0.9, 0.1])
        nu = pushforward(lg1(1, 0, 1), WeightedGaussian(1.0, np.zeros(1), np.eye(1)))
        assert (nu.mass, nu.mean[0], nu.cov[0, 0]) == (1.0, 0.0, 2.0)

    def test_gaussian_monte_carlo(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=10**6) + rng.normal(size=10**6)
        assert y.var() == pytest.approx(2.0, rel=0.01)

    def test_mass_preserved(self):
        nu = pushforward(lg1(0.5, 1, 2), WeightedGaussian(3.0, np.ones(1), np.eye(1)))
        assert nu.mass == 3.0
        assert nu.mean[0] == 1.5 and nu.cov[0, 0] == 2.25

    def test_dirac_through_discrete_and_gaussian(self):
        assert_allclose(pushforward(DiscreteKernel(FLIP), DiracMass(1, 2.0)).weights, [0.2, 1.8])
        nu = pushforward(lg1(2, 1, 1), DiracMass(np.array([1.0])))
        assert (nu.mean[0], nu.cov[0, 0]) == (3.0, 1.0)

    def test_duplication(self):
        nu = pushforward(DuplicationKernel(F2), DiscreteMeasure([0.25, 0.75]))
        assert_allclose(flatten_measure(nu, Product(F2, F2)).weights, [0.25, 0, 0, 0.75])
        nu = pushforward(DuplicationKernel(E1), WeightedGaussian(1.0, np.ones(1), np.eye(1) * 2))
        assert_allclose(nu.cov, np.full((2, 2), 2.0))

    def test_sequence_pushes_step_by_step(self):
        nu = pushforward(SequenceKernel(DiscreteKernel(FLIP), DuplicationKernel(F2)), DiscreteMeasure([1.0, 0.0]))
        assert_allclose(flatten_measure(nu, Product(F2, F2)).weights, [0.9, 0, 0, 0.1])

    def test_no_closed_form(self):
        with pytest.raises(UnsupportedPairingError):
            pushforward(TensorKernel(DiscreteKernel(FLIP), lg1(1, 0, 1)), DiscreteMeasure([1.0, 0.0]))


class TestPullback:
    def test_examples(self):
        h = DiscreteVec([1.0, 0.0])
        assert pullback(IdentityKernel(F2), h) is h
        assert_allclose(pullback(DiscreteKernel(FLIP), h).values, [0.9, 0.1])
        g = pullback(lg1(1, 0, 1), GaussianQuadratic(0.0, np.zeros(1), np.eye(1)))
        assert evaluate(g, np.zeros(1)) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_one_is_preserved(self):
        assert pullback(DiscreteKernel(FLIP), ONE) is ONE
        assert isinstance(pullback(lg1(1, 0, 1), ONE), One)

    def test_duplication_is_pointwise_product(self):
        g = ProductPotential(DiscreteVec([0.5, 2.0]), DiscreteVec([3.0, 0.25]))
        assert_allclose(pullback(DuplicationKernel(F2), g).values, [1.5, 0.5])

    def test_sequence_folds(self):
        k = SequenceKernel(DiscreteKernel(FLIP), DiscreteKernel(FLIP))
        assert_allclose(pullback(k, DiscreteVec([1.0, 0.0])).values, [0.82, 0.18])

    @pytest.mark.parametrize("seed", range(10))
    def test_gaussian_against_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        k = lg1(rng.normal(), rng.normal(), rng.uniform(0.2, 2))
        h = GaussianQuadratic(rng.normal(), rng.normal(size=1), np.array([[rng.uniform(0, 2)]]))
        x = rng.normal(size=1)
        assert evaluate(pullback(k, h), x) == pytest.approx(quadrature_pullback_1d(k, h, x), rel=1e-6)

    def test_gaussian_2d_separable_against_quadrature(self):
        # separable case: diagonal B, Q and H reduce to a product of 1D quadratures
        k = LinearGaussian(np.diag([1.0, 0.5]), np.array([0.2, -0.1]), np.diag([0.8, 1.5]))
        h = GaussianQuadratic(0.1, np.array([0.3, -0.4]), np.diag([0.6, 0.2]))
        x = np.array([0.7, -1.2])
        parts = [
            quadrature_pullback_1d(lg1(k.B[i, i], k.beta[i], k.Q[i, i]), GaussianQuadratic(0.0, h.F[i : i + 1], h.H[i : i + 1, i : i + 1]), x[i : i + 1])
            for i in range(2)
        ]
        assert evaluate(pullback(k, h), x) == pytest.approx(math.exp(0.1) * parts[0] * parts[1], rel=1e-8)


class TestObservationPotential:
    def test_discrete_column(self):
        g = observation_potential(ObservationModel(DiscreteKernel(np.array([[0.7, 0.3], [0.2, 0.8]])), 0))
        assert_allclose(g.values, [0.7, 0.2])

    def test_gaussian_example(self):
        g = observation_potential(ObservationModel(lg1(1, 0, 1), np.zeros(1)))
        assert g.logc == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
        assert (g.F[0], g.H[0, 0]) == (0.0, 1.0)

    def test_matches_density(self, rng):
        k = LinearGaussian(rng.normal(size=(2, 3)), rng.normal(size=2), np.array([[1.0, 0.3], [0.3, 0.5]]))
        for _ in range(20):
            x, v = rng.normal(size=3), rng.normal(size=2)
            g = observation_potential(ObservationModel(k, v))
            assert evaluate(g, x) == pytest.approx(gaussian_density(k, x, v), rel=1e-12)

    def test_rejects_deterministic(self):
        with pytest.raises(UnsupportedPairingError):
            observation_potential(ObservationModel(IdentityKernel(F2), 0))
        with pytest.raises(UnsupportedPairingError):
            observation_potential(ObservationModel(DuplicationKernel(F2), (0, 0)))


class TestSampling:
    def test_deterministic_kernels(self):
        z = RandomStream(1)
        assert sample_kernel(IdentityKernel(F2), 1, z) == 1
        assert sample_kernel(DuplicationKernel(F2), 1, z) == (1, 1)
        assert z.counter == 0

    def test_discrete_frequencies(self):
        k = DiscreteKernel(np.array([[0.3, 0.7], [0.5, 0.5]]))
        n = 10**5
        draws = np.array([sample_kernel(k, 0, RandomStream(5, (i,))) for i in range(n)])
        p1 = draws.mean()
        assert abs(p1 - 0.7) < 4 * math.sqrt(0.21 / n)

    def test_gaussian_moments(self):
        k = LinearGaussian(np.eye(2), np.array([1.0, -1.0]), np.array([[1.0, 0.5], [0.5, 2.0]]))
        ys = np.array([sample_kernel(k, np.zeros(2), RandomStream(9, (i,))) for i in range(20000)])
        assert_allclose(ys.mean(axis=0), [1.0, -1.0], atol=0.05)
        assert_allclose(np.cov(ys.T), k.Q, atol=0.06)

    def test_inverse_cdf_edges(self):
        assert sample_discrete_row([0.3, 1.0], 0.0) == 0
        assert sample_discrete_row([0.3, 1.0], 0.3) == 1
        assert sample_discrete_row([0.3, 0.3, 1.0], 0.3) == 2
        # a uniform at the top of [0, 1) never selects a trailing empty state
        assert sample_discrete_row([0.5, 1.0, 1.0], 1 - 2**-53) == 1

    def test_sequence_and_tensor(self):
        k = SequenceKernel(DiscreteKernel(np.array([[0.0, 1.0], [1.0, 0.0]])), DuplicationKernel(F2))
        assert sample_kernel(k, 0, RandomStream(0)) == (1, 1)
        t = TensorKernel(DiscreteKernel(np.eye(2)), lg1(1, 0, 1))
        x = sample_kernel(t, (1, np.zeros(1)), RandomStream(0))
        assert x[0] == 1 and x[1].shape == (1,)
