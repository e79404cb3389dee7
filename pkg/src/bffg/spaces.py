"""Spaces, points, nonnegative potentials and finite measures.

Points are plain Python values: an ``int`` on a finite space, a 1-d float
array on a Euclidean space and a ``tuple`` of points on a product space.
Products of finite spaces are also addressed through a flat (row-major)
index, and products of Euclidean spaces through the concatenated vector;
kernels in closed form work on those flat representations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Union

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from .errors import NumericalError, ShapeError, SpaceMismatchError, UnsupportedPairingError

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10


# --------------------------------------------------------------------------
# spaces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Finite:
    cardinality: int

    def __post_init__(self):
        if int(self.cardinality) != self.cardinality or self.cardinality < 1:
            raise ShapeError(f"cardinality must be a positive integer, got {self.cardinality}")
        object.__setattr__(self, "cardinality", int(self.cardinality))


@dataclass(frozen=True)
class Euclidean:
    dimension: int

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ShapeError(f"dimension must be a positive integer, got {self.dimension}")
        object.__setattr__(self, "dimension", int(self.dimension))


@dataclass(frozen=True, init=False)
class Product:
    factors: tuple

    def __init__(self, *factors):
        if len(factors) == 1 and isinstance(factors[0], (list, tuple)):
            factors = tuple(factors[0])
        if len(factors) < 2:
            raise ShapeError("a product space needs at least two factors")
        for f in factors:
            if not isinstance(f, (Finite, Euclidean, Product)):
                raise ShapeError(f"not a space: {f!r}")
        object.__setattr__(self, "factors", tuple(factors))


Space = Union[Finite, Euclidean, Product]


def leaves(space):
    """The non-product factors of ``space`` in left-to-right order."""
    if isinstance(space, Product):
        return tuple(leaf for f in space.factors for leaf in leaves(f))
    return (space,)


def is_discrete(space):
    return all(isinstance(leaf, Finite) for leaf in leaves(space))


def is_continuous(space):
    return all(isinstance(leaf, Euclidean) for leaf in leaves(space))


def size(space):
    """Number of points of a (product of) finite space(s)."""
    if not is_discrete(space):
        raise ShapeError(f"{space} is not finite")
    return math.prod(leaf.cardinality for leaf in leaves(space))


def dim(space):
    """Total dimension of a (product of) Euclidean space(s)."""
    if not is_continuous(space):
        raise ShapeError(f"{space} is not Euclidean")
    return sum(leaf.dimension for leaf in leaves(space))


def validate_point(space, point):
    if isinstance(space, Finite):
        if isinstance(point, (bool, np.bool_)) or not isinstance(point, (int, np.integer)):
            raise ShapeError(f"expected an integer index on {space}, got {point!r}")
        if not 0 <= point < space.cardinality:
            raise ShapeError(f"index {point} out of range for {space}")
    elif isinstance(space, Euclidean):
        arr = np.asarray(point, dtype=float)
        if arr.shape != (space.dimension,):
            raise ShapeError(f"expected a vector of length {space.dimension}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("point has non-finite coordinates")
    else:
        if not isinstance(point, tuple) or len(point) != len(space.factors):
            raise ShapeError(f"expected a {len(space.factors)}-tuple on {space}, got {point!r}")
        for f, p in zip(space.factors, point):
            validate_point(f, p)


def flat_index(space, point):
    """Row-major index of ``point`` in a finite (product) space."""
    validate_point(space, point)
    return _flat_index(space, point)


def _flat_index(space, point):
    if isinstance(space, Finite):
        return int(point)
    idx = 0
    for f, p in zip(space.factors, point):
        idx = idx * size(f) + _flat_index(f, p)
    return idx


def unflatten_index(space, index):
    if not 0 <= index < size(space):
        raise ShapeError(f"flat index {index} out of range for {space}")
    if isinstance(space, Finite):
        return int(index)
    out = []
    for f in reversed(space.factors):
        n = size(f)
        out.append(unflatten_index(f, index % n))
        index //= n
    return tuple(reversed(out))


def flat_vector(space, point):
    """Concatenated coordinates of ``point`` in a Euclidean (product) space."""
    validate_point(space, point)
    return _flat_vector(space, point)


def _flat_vector(space, point):
    if isinstance(space, Euclidean):
        return np.asarray(point, dtype=float)
    return np.concatenate([_flat_vector(f, p) for f, p in zip(space.factors, point)])


def unflatten_vector(space, vec):
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (dim(space),):
        raise ShapeError(f"expected a vector of length {dim(space)}")
    if isinstance(space, Euclidean):
        return vec
    out, start = [], 0
    for f in space.factors:
        d = dim(f)
        out.append(unflatten_vector(f, vec[start:start + d]))
        start += d
    return tuple(out)


def _sym(a, what):
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{what} must be a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ShapeError(f"{what} is not symmetric")
    return (a + a.T) / 2


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# potentials
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class One:
    """The constant function 1 on any space."""

    def __call__(self, x):
        return 1.0


ONE = One()


@dataclass(frozen=True, eq=False)
class DiscreteVec:
    values: np.ndarray
    space: Space = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ShapeError("discrete potential values must be a non-empty vector")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ShapeError("discrete potential values must be finite and nonnegative")
        if not np.any(v > 0):
            raise ShapeError("discrete potential vanishes identically")
        space = self.space if self.space is not None else Finite(v.size)
        if size(space) != v.size:
            raise ShapeError(f"{v.size} values do not fit {space}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "space", space)

    def __call__(self, x):
        return float(self.values[flat_index(self.space, x)])


@dataclass(frozen=True, eq=False)
class GaussianQuadratic:
    """h(x) = exp(logc + F.x - x.H.x / 2)."""

    logc: float
    F: np.ndarray
    H: np.ndarray
    space: Space = None

    def __post_init__(self):
        F = np.atleast_1d(np.asarray(self.F, dtype=float))
        H = _sym(np.atleast_2d(self.H), "H")
        if F.ndim != 1 or H.shape != (F.size, F.size):
            raise ShapeError(f"F has length {F.size} but H has shape {H.shape}")
        logc = float(self.logc)
        if not math.isfinite(logc) or not np.all(np.isfinite(F)) or not np.all(np.isfinite(H)):
            raise ShapeError("Gaussian potential parameters must be finite")
        space = self.space if self.space is not None else Euclidean(F.size)
        if dim(space) != F.size:
            raise ShapeError(f"dimension {F.size} does not fit {space}")
        object.__setattr__(self, "logc", logc)
        object.__setattr__(self, "F", _frozen(F))
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "space", space)

    @property
    def dimension(self):
        return self.F.size

    def log_value(self, x):
        v = flat_vector(self.space, x)
        return self.logc + self.F @ v - 0.5 * v @ self.H @ v

    def __call__(self, x):
        return math.exp(self.log_value(x))


@dataclass(frozen=True, init=False, eq=False)
class ProductPotential:
    """(g1 ⊙ g2)(x1, x2) = g1(x1) g2(x2)."""

    factors: tuple

    def __init__(self, *factors):
        if len(factors) == 1 and isinstance(factors[0], (list, tuple)):
            factors = tuple(factors[0])
        if len(factors) < 2:
            raise ShapeError("a product potential needs at least two factors")
        object.__setattr__(self, "factors", tuple(factors))

    def __call__(self, x):
        if not isinstance(x, tuple) or len(x) != len(self.factors):
            raise ShapeError(f"expected a {len(self.factors)}-tuple, got {x!r}")
        return math.prod(f(xi) for f, xi in zip(self.factors, x))


HPotential = Union[One, DiscreteVec, GaussianQuadratic, ProductPotential]


def evaluate(h, x):
    """h(x) for any potential; raises ShapeError when ``x`` does not fit."""
    return h(x)


def log_evaluate(h, x):
    if isinstance(h, One):
        return 0.0
    if isinstance(h, GaussianQuadratic):
        return h.log_value(x)
    if isinstance(h, ProductPotential):
        if not isinstance(x, tuple) or len(x) != len(h.factors):
            raise ShapeError(f"expected a {len(h.factors)}-tuple, got {x!r}")
        return sum(log_evaluate(f, xi) for f, xi in zip(h.factors, x))
    v = h(x)
    return math.log(v) if v > 0 else -math.inf


def tensor_potential(g1, g2):
    if isinstance(g1, One) and isinstance(g2, One):
        return ONE
    return ProductPotential(g1, g2)


def flatten_potential(h, space):
    """Re-express ``h`` as a single DiscreteVec or GaussianQuadratic on ``space``.

    Product potentials over a product space become Kronecker products
    (finite) or block-diagonal quadratics (Euclidean).
    """
    if isinstance(h, One):
        return ONE
    if isinstance(h, DiscreteVec):
        if h.space == space:
            return h
        return DiscreteVec(h.values, space)
    if isinstance(h, GaussianQuadratic):
        if h.space == space:
            return h
        return GaussianQuadratic(h.logc, h.F, h.H, space)
    if not isinstance(space, Product) or len(space.factors) != len(h.factors):
        raise ShapeError(f"product potential with {len(h.factors)} factors does not fit {space}")
    parts = [flatten_potential(f, s) for f, s in zip(h.factors, space.factors)]
    if all(isinstance(p, One) for p in parts):
        return ONE
    if is_discrete(space):
        vecs = [np.ones(size(s)) if isinstance(p, One) else p.values for p, s in zip(parts, space.factors)]
        return DiscreteVec(reduce(np.kron, vecs), space)
    if is_continuous(space):
        logc, Fs, Hs = 0.0, [], []
        for p, s in zip(parts, space.factors):
            d = dim(s)
            if isinstance(p, One):
                Fs.append(np.zeros(d))
                Hs.append(np.zeros((d, d)))
            else:
                logc += p.logc
                Fs.append(p.F)
                Hs.append(p.H)
        return GaussianQuadratic(logc, np.concatenate(Fs), block_diag(*Hs), space)
    raise UnsupportedPairingError(f"cannot flatten a potential on mixed space {space}")


def multiply_potentials(a, b, space=None):
    """Pointwise product x -> a(x) b(x) of two potentials on the same space."""
    if isinstance(a, One):
        return b
    if isinstance(b, One):
        return a
    if isinstance(a, ProductPotential) and isinstance(b, ProductPotential) and len(a.factors) == len(b.factors):
        spaces = space.factors if isinstance(space, Product) else [None] * len(a.factors)
        return ProductPotential([multiply_potentials(x, y, s) for x, y, s in zip(a.factors, b.factors, spaces)])
    if isinstance(a, ProductPotential) or isinstance(b, ProductPotential):
        if space is None:
            raise ShapeError("a space is needed to multiply a product potential with a flat one")
        return multiply_potentials(flatten_potential(a, space), flatten_potential(b, space))
    if isinstance(a, DiscreteVec) and isinstance(b, DiscreteVec):
        if a.values.size != b.values.size:
            raise SpaceMismatchError("discrete potentials of different sizes")
        v = a.values * b.values
        if not np.any(v > 0):
            raise NumericalError("product of potentials vanishes identically")
        return DiscreteVec(v, a.space)
    if isinstance(a, GaussianQuadratic) and isinstance(b, GaussianQuadratic):
        if a.dimension != b.dimension:
            raise SpaceMismatchError("Gaussian potentials of different dimensions")
        return GaussianQuadratic(a.logc + b.logc, a.F + b.F, a.H + b.H, a.space)
    raise UnsupportedPairingError(f"cannot multiply {type(a).__name__} and {type(b).__name__}")


# --------------------------------------------------------------------------
# finite measures
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    weights: np.ndarray
    space: Space = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ShapeError("discrete measure weights must be a non-empty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ShapeError("discrete measure weights must be finite and nonnegative")
        space = self.space if self.space is not None else Finite(w.size)
        if size(space) != w.size:
            raise ShapeError(f"{w.size} weights do not fit {space}")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "space", space)


@dataclass(frozen=True, eq=False)
class WeightedGaussian:
    """mass * Normal(mean, cov)."""

    mass: float
    mean: np.ndarray
    cov: np.ndarray
    space: Space = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _sym(np.atleast_2d(self.cov), "cov")
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"mean has length {mean.size} but cov has shape {cov.shape}")
        mass = float(self.mass)
        if not (math.isfinite(mass) and mass >= 0):
            raise ShapeError("mass must be finite and nonnegative")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ShapeError("Gaussian parameters must be finite")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.linalg.eigvalsh(cov)[0] < -PSD_TOL * scale:
            raise ShapeError("cov is not positive semidefinite")
        space = self.space if self.space is not None else Euclidean(mean.size)
        if dim(space) != mean.size:
            raise ShapeError(f"dimension {mean.size} does not fit {space}")
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "cov", _frozen(cov))
        object.__setattr__(self, "space", space)


@dataclass(frozen=True, eq=False)
class DiracMass:
    point: object
    mass: float = 1.0

    def __post_init__(self):
        mass = float(self.mass)
        if not (math.isfinite(mass) and mass >= 0):
            raise ShapeError("mass must be finite and nonnegative")
        object.__setattr__(self, "mass", mass)


@dataclass(frozen=True, init=False, eq=False)
class ProductMeasure:
    factors: tuple

    def __init__(self, *factors):
        if len(factors) == 1 and isinstance(factors[0], (list, tuple)):
            factors = tuple(factors[0])
        if len(factors) < 2:
            raise ShapeError("a product measure needs at least two factors")
        object.__setattr__(self, "factors", tuple(factors))


FiniteMeasure = Union[DiscreteMeasure, WeightedGaussian, DiracMass, ProductMeasure]


def total_mass(mu):
    if isinstance(mu, DiscreteMeasure):
        return float(mu.weights.sum())
    if isinstance(mu, (WeightedGaussian, DiracMass)):
        return mu.mass
    return math.prod(total_mass(f) for f in mu.factors)


def scale_measure(mu, c):
    """The measure c * mu (for a product, the first factor carries c)."""
    if isinstance(mu, DiscreteMeasure):
        return DiscreteMeasure(mu.weights * c, mu.space)
    if isinstance(mu, WeightedGaussian):
        return WeightedGaussian(mu.mass * c, mu.mean, mu.cov, mu.space)
    if isinstance(mu, DiracMass):
        return DiracMass(mu.point, mu.mass * c)
    return ProductMeasure([scale_measure(mu.factors[0], c), *mu.factors[1:]])


def normalize(mu):
    m = total_mass(mu)
    if not m > 0:
        raise NumericalError("cannot normalize a measure of zero mass")
    return scale_measure(mu, 1.0 / m)


def flatten_measure(mu, space):
    """Re-express ``mu`` as a single DiscreteMeasure or WeightedGaussian on ``space``."""
    if isinstance(mu, DiscreteMeasure):
        return mu if mu.space == space else DiscreteMeasure(mu.weights, space)
    if isinstance(mu, WeightedGaussian):
        return mu if mu.space == space else WeightedGaussian(mu.mass, mu.mean, mu.cov, space)
    if isinstance(mu, DiracMass):
        if is_discrete(space):
            w = np.zeros(size(space))
            w[flat_index(space, mu.point)] = mu.mass
            return DiscreteMeasure(w, space)
        if is_continuous(space):
            d = dim(space)
            return WeightedGaussian(mu.mass, flat_vector(space, mu.point), np.zeros((d, d)), space)
        raise UnsupportedPairingError(f"cannot flatten a Dirac mass on mixed space {space}")
    if not isinstance(space, Product) or len(space.factors) != len(mu.factors):
        raise ShapeError(f"product measure with {len(mu.factors)} factors does not fit {space}")
    parts = [flatten_measure(f, s) for f, s in zip(mu.factors, space.factors)]
    if is_discrete(space):
        return DiscreteMeasure(reduce(np.kron, [p.weights for p in parts]), space)
    if is_continuous(space):
        return WeightedGaussian(
            math.prod(p.mass for p in parts),
            np.concatenate([p.mean for p in parts]),
            block_diag(*[p.cov for p in parts]),
            space,
        )
    raise UnsupportedPairingError(f"cannot flatten a measure on mixed space {space}")


# --------------------------------------------------------------------------
# Gaussian algebra
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianTilt:
    """Terms of  ∫ exp(F.y - y.H.y/2) Normal(y; a, C) dy  for a covariance C.

    The integral equals exp(const + a.Fbar - a.Hbar.a / 2) and the tilted law
    of y is Normal(a + K (F - H a), K) with K = (C^-1 + H)^-1.
    """

    K: np.ndarray
    Hbar: np.ndarray
    Fbar: np.ndarray
    const: float

    def log_integral(self, a):
        return self.const + a @ self.Fbar - 0.5 * a @ self.Hbar @ a

    def tilted_mean(self, a, F, H):
        return a + self.K @ (F - H @ a)


def cov_factor(cov):
    """A matrix S with S S^T = cov, for PSD ``cov``."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def gaussian_tilt(F, H, factor):
    """Tilt a Gaussian with covariance ``factor @ factor.T`` by exp(F.y - y.H.y/2).

    Works without inverting the covariance, so singular covariances (Dirac
    components) are fine; fails when C^-1 + H is not positive definite.
    """
    d = F.size
    N = np.eye(d) + factor.T @ H @ factor
    N = (N + N.T) / 2
    try:
        c = cho_factor(N, lower=True)
    except LinAlgError:
        raise NumericalError("tilted Gaussian precision is not positive definite") from None
    K = factor @ cho_solve(c, factor.T)
    K = (K + K.T) / 2
    HK = H @ K
    Hbar = H - HK @ H
    Fbar = F - HK @ F
    const = 0.5 * F @ K @ F - float(np.sum(np.log(np.diag(c[0]))))
    return GaussianTilt(K, (Hbar + Hbar.T) / 2, Fbar, const)


def _log_integrate_gaussian(mu, h):
    t = gaussian_tilt(h.F, h.H, cov_factor(mu.cov))
    return math.log(mu.mass) + h.logc + t.log_integral(mu.mean)


def integrate(mu, h):
    """∫ h dmu, exactly, for the supported family pairings."""
    if isinstance(h, One):
        return total_mass(mu)
    if isinstance(mu, DiracMass):
        return mu.mass * h(mu.point) if mu.mass > 0 else 0.0
    if isinstance(mu, ProductMeasure) and isinstance(h, ProductPotential) and len(mu.factors) == len(h.factors):
        return math.prod(integrate(m, g) for m, g in zip(mu.factors, h.factors))
    if isinstance(mu, ProductMeasure):
        raise UnsupportedPairingError("integrating a product measure needs a matching product potential")
    if isinstance(mu, DiscreteMeasure):
        g = flatten_potential(h, mu.space)
        if not isinstance(g, (DiscreteVec, One)):
            raise UnsupportedPairingError(f"cannot integrate {type(h).__name__} against a discrete measure")
        if isinstance(g, One):
            return total_mass(mu)
        if g.values.size != mu.weights.size:
            raise SpaceMismatchError("measure and potential live on different spaces")
        return float(mu.weights @ g.values)
    if isinstance(mu, WeightedGaussian):
        g = flatten_potential(h, mu.space)
        if isinstance(g, One):
            return mu.mass
        if not isinstance(g, GaussianQuadratic):
            raise UnsupportedPairingError(f"cannot integrate {type(h).__name__} against a Gaussian")
        if g.dimension != mu.mean.size:
            raise SpaceMismatchError("measure and potential live on different spaces")
        if mu.mass == 0:
            return 0.0
        return math.exp(_log_integrate_gaussian(mu, g))
    raise UnsupportedPairingError(f"cannot integrate {type(h).__name__} against {type(mu).__name__}")
