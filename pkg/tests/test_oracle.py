import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from bffg.instances import hmm_chain
from bffg.kernels import LinearGaussian
from bffg.oracle import MAX_PATHS, brute_force_smoother, quadrature_pullback_1d, rts_smoother
from bffg.spaces import ONE, Euclidean, GaussianQuadratic

E1 = Euclidean(1)


def lg1(B, beta, Q):
    return LinearGaussian(np.array([[B]]), np.array([beta]), np.array([[Q]]), E1, E1)


class TestBruteForce:
    def test_deterministic_single_path(self):
        P = np.array([[0.0, 1.0], [1.0, 0.0]])
        t = hmm_chain([P, P], np.eye(2), 0, [1, 0])
        bf = brute_force_smoother(t)
        assert bf.joint.sum() == pytest.approx(1.0, abs=1e-12)
        assert bf.probability({"x1": 1, "x2": 0}) == 1.0

    def test_uniform_symmetry(self):
        U = np.full((2, 2), 0.5)
        t = hmm_chain([U, U], U, 0, [0, 1])
        for p in brute_force_smoother(t).marginals.values():
            assert_allclose(p, [0.5, 0.5])

    def test_relabeling_covariance(self):
        rng = np.random.default_rng(0)
        P = rng.dirichlet(np.ones(3), size=3)
        E = rng.dirichlet(np.ones(2), size=3)
        perm = np.array([2, 0, 1])
        t = hmm_chain([P, P], E, 0, [1, 0])
        Pp = P[np.ix_(perm, perm)]
        tp = hmm_chain([Pp, Pp], E[perm], int(np.flatnonzero(perm == 0)[0]), [1, 0])
        a, b = brute_force_smoother(t), brute_force_smoother(tp)
        for n in a.marginals:
            assert_allclose(b.marginals[n], a.marginals[n][perm], atol=1e-14)
        assert b.evidence == pytest.approx(a.evidence, rel=1e-14)

    def test_cap(self):
        U = np.full((10, 10), 0.1)
        t = hmm_chain([U] * 8, U, 0, [0] * 8)
        assert 10**8 > MAX_PATHS
        with pytest.raises(ValueError, match="cap"):
            brute_force_smoother(t)

    def test_frozen_weather_hmm(self):
        P = np.array([[0.8, 0.15, 0.05], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]])
        E = np.array([[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.05, 0.25, 0.7]])
        bf = brute_force_smoother(hmm_chain([P] * 5, E, 0, [0, 0, 2, 1, 2]))
        # by-hand check of the first factor: P(y1 = 0 | x0 = 0) = 0.8*0.7 + 0.15*0.2 + 0.05*0.05
        t1 = hmm_chain([P], E, 0, [0])
        assert brute_force_smoother(t1).evidence == pytest.approx(0.5925, rel=1e-14)
        assert bf.evidence == pytest.approx(0.005881818424999999, rel=1e-13)


class TestRTS:
    def test_hand_recursion(self):
        # x1 ~ N(0, 1), x2 ~ N(x1, 1), y ~ N(x2, 1) observed at 3
        k = lg1(1, 0, 1)
        sm = rts_smoother([k, k], [None, (k, np.array([3.0]))], np.zeros(1))
        (m1, c1), (m2, c2) = sm
        assert m1[0] == pytest.approx(1.0, abs=1e-14) and c1[0, 0] == pytest.approx(2 / 3, abs=1e-14)
        assert m2[0] == pytest.approx(2.0, abs=1e-14) and c2[0, 0] == pytest.approx(2 / 3, abs=1e-14)

    def test_uninformative_follows_prior(self):
        k = lg1(0.5, 1.0, 2.0)
        vague = lg1(1.0, 0.0, 1e12)
        sm = rts_smoother([k, k], [None, (vague, np.array([0.0]))], np.array([2.0]))
        assert sm[0][0][0] == pytest.approx(2.0, abs=1e-9)
        assert sm[1][0][0] == pytest.approx(2.0, abs=1e-9)
        assert sm[1][1][0, 0] == pytest.approx(2.5, abs=1e-9)

    def test_against_quadrature_length_three(self):
        from scipy import integrate

        k = lg1(0.9, 0.1, 0.5)
        ok = lg1(1.0, 0.0, 0.3)
        ys = [0.4, -0.2, 0.7]
        sm = rts_smoother([k] * 3, [(ok, np.array([y])) for y in ys], np.zeros(1))

        def npdf(y, m, v):
            return math.exp(-0.5 * (y - m) ** 2 / v) / math.sqrt(2 * math.pi * v)

        def joint(x3, x2, x1):
            p = npdf(x1, 0.1, 0.5) * npdf(x2, 0.9 * x1 + 0.1, 0.5) * npdf(x3, 0.9 * x2 + 0.1, 0.5)
            return p * npdf(ys[0], x1, 0.3) * npdf(ys[1], x2, 0.3) * npdf(ys[2], x3, 0.3)

        lim = [(-6, 6)] * 3
        opts = {"epsabs": 1e-11, "epsrel": 1e-9}
        z, _ = integrate.nquad(joint, lim, opts=opts)
        m2, _ = integrate.nquad(lambda a, b, c: b * joint(a, b, c), lim, opts=opts)
        assert sm[1][0][0] == pytest.approx(m2 / z, abs=1e-6)


class TestQuadrature:
    def test_one(self):
        assert quadrature_pullback_1d(lg1(1, 0, 1), ONE, np.zeros(1)) == pytest.approx(1.0, abs=1e-10)

    def test_reference_value(self):
        v = quadrature_pullback_1d(lg1(1, 0, 1), GaussianQuadratic(0.0, np.zeros(1), np.eye(1)), np.zeros(1))
        assert v == pytest.approx(0.7071068, abs=1e-7)

    def test_even_symmetry(self):
        h = GaussianQuadratic(0.3, np.zeros(1), np.array([[0.4]]))
        k = lg1(1, 0, 0.7)
        assert quadrature_pullback_1d(k, h, np.array([1.7])) == pytest.approx(quadrature_pullback_1d(k, h, np.array([-1.7])), rel=1e-12)
