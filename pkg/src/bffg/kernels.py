"""Markov kernels in closed-form families.

Finite-state kernels are row-stochastic matrices and linear-Gaussian kernels
are y | x ~ Normal(B x + beta, Q). Both also act on products of their
spaces through the flat index / concatenated vector. Compositions that leave
these families are kept as a ``SequenceKernel`` (or ``TensorKernel`` for
mixed tensor products) which can still be sampled and, where every factor
allows it, pulled back.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property, reduce
from itertools import accumulate

import numpy as np
from scipy.linalg import block_diag, cho_solve

from .errors import NumericalError, ShapeError, SpaceMismatchError, UnsupportedPairingError
from .rng import first_stream
from .spaces import (
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
    _sym,
    dim,
    flat_index,
    flat_vector,
    flatten_measure,
    flatten_potential,
    gaussian_tilt,
    is_continuous,
    is_discrete,
    multiply_potentials,
    size,
    unflatten_index,
    unflatten_vector,
    validate_point,
)

ROW_TOL = 1e-10
ROW_RENORMALIZE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    matrix: np.ndarray
    source: object = None
    target: object = None

    def __post_init__(self):
        P = np.array(self.matrix, dtype=float)
        if P.ndim != 2 or P.size == 0:
            raise ShapeError("transition matrix must be a non-empty 2-d array")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ShapeError("transition matrix entries must be finite and nonnegative")
        dev = np.max(np.abs(P.sum(axis=1) - 1.0))
        if dev > ROW_RENORMALIZE_TOL:
            raise ShapeError(f"rows must sum to 1 (max deviation {dev:.3g})")
        if dev > ROW_TOL:
            P = P / P.sum(axis=1, keepdims=True)
        source = self.source if self.source is not None else Finite(P.shape[0])
        target = self.target if self.target is not None else Finite(P.shape[1])
        if size(source) != P.shape[0] or size(target) != P.shape[1]:
            raise ShapeError(f"matrix of shape {P.shape} does not fit {source} -> {target}")
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)

    @cached_property
    def _cumulative_rows(self):
        return [list(accumulate(row)) for row in self.matrix.tolist()]


@dataclass(frozen=True, eq=False)
class LinearGaussian:
    """y | x ~ Normal(B x + beta, Q)."""

    B: np.ndarray
    beta: np.ndarray
    Q: np.ndarray
    source: object = None
    target: object = None

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        Q = _sym(np.atleast_2d(self.Q), "Q")
        if B.ndim != 2 or beta.shape != (B.shape[0],) or Q.shape != (B.shape[0], B.shape[0]):
            raise ShapeError(f"inconsistent shapes B{B.shape}, beta{beta.shape}, Q{Q.shape}")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(beta)) and np.all(np.isfinite(Q))):
            raise ShapeError("linear-Gaussian parameters must be finite")
        try:
            chol = np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise ShapeError("Q must be positive definite") from None
        source = self.source if self.source is not None else Euclidean(B.shape[1])
        target = self.target if self.target is not None else Euclidean(B.shape[0])
        if dim(source) != B.shape[1] or dim(target) != B.shape[0]:
            raise ShapeError(f"B of shape {B.shape} does not fit {source} -> {target}")
        for name, val in (("B", B), ("beta", beta), ("Q", Q), ("chol", chol)):
            val.setflags(write=False)
            object.__setattr__(self, name if name != "chol" else "_chol", val)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)

    def mean(self, x):
        return self.B @ flat_vector(self.source, x) + self.beta

    @cached_property
    def log_det_Q(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def solve_Q(self, rhs):
        return cho_solve((self._chol, True), rhs)


@dataclass(frozen=True)
class IdentityKernel:
    space: object

    @property
    def source(self):
        return self.space

    @property
    def target(self):
        return self.space


@dataclass(frozen=True)
class DuplicationKernel:
    """x -> (x, x)."""

    space: object

    @property
    def source(self):
        return self.space

    @property
    def target(self):
        return Product(self.space, self.space)


@dataclass(frozen=True, init=False, eq=False)
class SequenceKernel:
    """Chapman-Kolmogorov composite kept as a list of steps."""

    kernels: tuple

    def __init__(self, *kernels):
        if len(kernels) == 1 and isinstance(kernels[0], (list, tuple)):
            kernels = tuple(kernels[0])
        flat = []
        for k in kernels:
            flat.extend(k.kernels if isinstance(k, SequenceKernel) else [k])
        if len(flat) < 2:
            raise ShapeError("a sequence kernel needs at least two steps")
        for a, b in zip(flat, flat[1:]):
            if a.target != b.source:
                raise SpaceMismatchError(f"cannot chain {a.target} into {b.source}")
        object.__setattr__(self, "kernels", tuple(flat))

    @property
    def source(self):
        return self.kernels[0].source

    @property
    def target(self):
        return self.kernels[-1].target


@dataclass(frozen=True, init=False, eq=False)
class TensorKernel:
    """Product kernel acting factorwise; used when no flat closed form exists."""

    factors: tuple

    def __init__(self, *factors):
        if len(factors) == 1 and isinstance(factors[0], (list, tuple)):
            factors = tuple(factors[0])
        if len(factors) < 2:
            raise ShapeError("a tensor kernel needs at least two factors")
        object.__setattr__(self, "factors", tuple(factors))

    @property
    def source(self):
        return Product([k.source for k in self.factors])

    @property
    def target(self):
        return Product([k.target for k in self.factors])


@dataclass(frozen=True, eq=False)
class ObservationModel:
    kernel: object
    observed: object


# --------------------------------------------------------------------------
# composition
# --------------------------------------------------------------------------


def compose_kernels(k1, k2):
    """k1 followed by k2 (diagrammatic order)."""
    if k1.target != k2.source:
        raise SpaceMismatchError(f"cannot compose: {k1.target} != {k2.source}")
    if isinstance(k1, IdentityKernel):
        return k2
    if isinstance(k2, IdentityKernel):
        return k1
    if isinstance(k1, DiscreteKernel) and isinstance(k2, DiscreteKernel):
        return DiscreteKernel(k1.matrix @ k2.matrix, k1.source, k2.target)
    if isinstance(k1, LinearGaussian) and isinstance(k2, LinearGaussian):
        return LinearGaussian(
            k2.B @ k1.B,
            k2.B @ k1.beta + k2.beta,
            k2.B @ k1.Q @ k2.B.T + k2.Q,
            k1.source,
            k2.target,
        )
    return SequenceKernel(k1, k2)


def tensor_kernels(k1, k2):
    if isinstance(k1, IdentityKernel) and isinstance(k2, IdentityKernel):
        return IdentityKernel(Product(k1.space, k2.space))
    src, tgt = Product(k1.source, k2.source), Product(k1.target, k2.target)
    if isinstance(k1, DiscreteKernel) and isinstance(k2, DiscreteKernel):
        return DiscreteKernel(np.kron(k1.matrix, k2.matrix), src, tgt)
    if isinstance(k1, LinearGaussian) and isinstance(k2, LinearGaussian):
        return LinearGaussian(
            block_diag(k1.B, k2.B),
            np.concatenate([k1.beta, k2.beta]),
            block_diag(k1.Q, k2.Q),
            src,
            tgt,
        )
    return TensorKernel(k1, k2)


# --------------------------------------------------------------------------
# pushforward
# --------------------------------------------------------------------------


def pushforward(k, mu):
    """The measure mu k."""
    if isinstance(k, IdentityKernel):
        return mu
    if isinstance(k, SequenceKernel):
        return reduce(lambda m, step: pushforward(step, m), k.kernels, mu)
    if isinstance(k, TensorKernel):
        parts = _split_product_measure(mu, len(k.factors))
        return ProductMeasure([pushforward(f, m) for f, m in zip(k.factors, parts)])
    if isinstance(k, DuplicationKernel):
        return _duplicate_measure(k.space, mu)
    if isinstance(k, DiscreteKernel):
        m = flatten_measure(mu, k.source)
        if not isinstance(m, DiscreteMeasure):
            raise UnsupportedPairingError("a discrete kernel needs a discrete measure")
        return DiscreteMeasure(m.weights @ k.matrix, k.target)
    if isinstance(k, LinearGaussian):
        m = flatten_measure(mu, k.source)
        if not isinstance(m, WeightedGaussian):
            raise UnsupportedPairingError("a linear-Gaussian kernel needs a Gaussian or Dirac measure")
        return WeightedGaussian(m.mass, k.B @ m.mean + k.beta, k.B @ m.cov @ k.B.T + k.Q, k.target)
    raise UnsupportedPairingError(f"no pushforward for {type(k).__name__}")


def _split_product_measure(mu, n):
    if isinstance(mu, ProductMeasure) and len(mu.factors) == n:
        return mu.factors
    if isinstance(mu, DiracMass) and isinstance(mu.point, tuple) and len(mu.point) == n:
        return [DiracMass(p, mu.mass if i == 0 else 1.0) for i, p in enumerate(mu.point)]
    raise UnsupportedPairingError("a factorwise kernel needs a product measure or a Dirac mass")


def _duplicate_measure(space, mu):
    if isinstance(mu, DiracMass):
        return DiracMass((mu.point, mu.point), mu.mass)
    target = Product(space, space)
    if is_discrete(space):
        m = flatten_measure(mu, space)
        n = size(space)
        w = np.zeros((n, n))
        w[np.diag_indices(n)] = m.weights
        return DiscreteMeasure(w.ravel(), target)
    if is_continuous(space):
        m = flatten_measure(mu, space)
        D = _dup_selector(dim(space))
        return WeightedGaussian(m.mass, D @ m.mean, D @ m.cov @ D.T, target)
    raise UnsupportedPairingError(f"cannot duplicate a measure on {space}")


def _dup_selector(d):
    return np.vstack([np.eye(d), np.eye(d)])


# --------------------------------------------------------------------------
# pullback
# --------------------------------------------------------------------------


def pullback(k, h):
    """The potential x -> ∫ h(y) k(x, dy)."""
    if isinstance(h, One) or isinstance(k, IdentityKernel):
        return h
    if isinstance(k, SequenceKernel):
        return reduce(lambda g, step: pullback(step, g), reversed(k.kernels), h)
    if isinstance(k, TensorKernel):
        if not isinstance(h, ProductPotential) or len(h.factors) != len(k.factors):
            raise UnsupportedPairingError("a factorwise kernel needs a matching product potential")
        return ProductPotential([pullback(f, g) for f, g in zip(k.factors, h.factors)])
    if isinstance(k, DuplicationKernel):
        return _pullback_duplication(k.space, h)
    if isinstance(k, DiscreteKernel):
        g = flatten_potential(h, k.target)
        if not isinstance(g, DiscreteVec):
            raise UnsupportedPairingError(f"cannot pull {type(h).__name__} back through a discrete kernel")
        v = k.matrix @ g.values
        if not np.any(v > 0):
            raise NumericalError("pulled-back potential vanishes identically")
        return DiscreteVec(v, k.source)
    if isinstance(k, LinearGaussian):
        g = flatten_potential(h, k.target)
        if not isinstance(g, GaussianQuadratic):
            raise UnsupportedPairingError(f"cannot pull {type(h).__name__} back through a linear-Gaussian kernel")
        return _pullback_linear_gaussian(k, g)
    raise UnsupportedPairingError(f"no pullback for {type(k).__name__}")


def _pullback_linear_gaussian(k, g):
    # ∫ g(y) N(y; Bx + beta, Q) dy, completing the square in y around a = Bx + beta.
    t = gaussian_tilt(g.F, g.H, k._chol)
    B, beta = k.B, k.beta
    H = B.T @ t.Hbar @ B
    F = B.T @ (t.Fbar - t.Hbar @ beta)
    logc = g.logc + t.const - 0.5 * beta @ t.Hbar @ beta + beta @ t.Fbar
    return GaussianQuadratic(logc, F, (H + H.T) / 2, k.source)


def _pullback_duplication(space, h):
    if isinstance(h, ProductPotential):
        if len(h.factors) != 2:
            raise ShapeError("duplication needs a binary product potential")
        return multiply_potentials(h.factors[0], h.factors[1], space)
    if isinstance(h, DiscreteVec) and is_discrete(space):
        n = size(space)
        v = h.values.reshape(n, n).diagonal().copy()
        if not np.any(v > 0):
            raise NumericalError("pulled-back potential vanishes identically")
        return DiscreteVec(v, space)
    if isinstance(h, GaussianQuadratic) and is_continuous(space):
        D = _dup_selector(dim(space))
        return GaussianQuadratic(h.logc, D.T @ h.F, D.T @ h.H @ D, space)
    raise UnsupportedPairingError(f"cannot pull {type(h).__name__} back through duplication")


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------


def observation_potential(om):
    """x -> p(x, observed) for the density of ``om.kernel``."""
    k, v = om.kernel, om.observed
    if isinstance(k, DiscreteKernel):
        col = k.matrix[:, flat_index(k.target, v)]
        if not np.any(col > 0):
            raise NumericalError(f"observed value {v!r} is impossible from every state")
        return DiscreteVec(col, k.source)
    if isinstance(k, LinearGaussian):
        r = flat_vector(k.target, v) - k.beta
        Qi_B = k.solve_Q(k.B)
        Qi_r = k.solve_Q(r)
        d = k.beta.size
        logc = -0.5 * r @ Qi_r - 0.5 * (d * math.log(2 * math.pi) + k.log_det_Q)
        return GaussianQuadratic(logc, k.B.T @ Qi_r, k.B.T @ Qi_B, k.source)
    if isinstance(k, TensorKernel):
        validate_point(k.target, v)
        return ProductPotential([observation_potential(ObservationModel(f, vi)) for f, vi in zip(k.factors, v)])
    raise UnsupportedPairingError(f"{type(k).__name__} has no density to observe through")


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------


def sample_discrete_row(cumulative, u):
    """Inverse-CDF draw from one cumulative row, scanning left to right."""
    idx = min(bisect_right(cumulative, u * cumulative[-1]), len(cumulative) - 1)
    # rounding can land past the last state with mass; step back over empty states
    while idx > 0 and cumulative[idx] == cumulative[idx - 1]:
        idx -= 1
    return idx


def sample_kernel(k, x, stream):
    """One draw from k(x, .) using ``stream`` (which may be a tuple of streams)."""
    if isinstance(k, IdentityKernel):
        return x
    if isinstance(k, DuplicationKernel):
        return (x, x)
    if isinstance(k, SequenceKernel):
        z = first_stream(stream)
        for step in k.kernels:
            here, z = z.split()
            x = sample_kernel(step, x, here)
        return x
    if isinstance(k, TensorKernel):
        z = first_stream(stream)
        validate_point(k.source, x)
        return tuple(sample_kernel(f, xi, z.child(i)) for i, (f, xi) in enumerate(zip(k.factors, x)))
    z = first_stream(stream)
    if isinstance(k, DiscreteKernel):
        row = k._cumulative_rows[flat_index(k.source, x)]
        return unflatten_index(k.target, sample_discrete_row(row, z.next_uniform()))
    if isinstance(k, LinearGaussian):
        y = k.mean(x) + k._chol @ np.asarray(z.normals(k.beta.size))
        return unflatten_vector(k.target, y)
    raise UnsupportedPairingError(f"cannot sample from {type(k).__name__}")


def is_closed_form(k):
    return isinstance(k, (DiscreteKernel, LinearGaussian, IdentityKernel, DuplicationKernel))
