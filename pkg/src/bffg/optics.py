"""Backward-filtering / forward-guiding optics.

An optic pairs a forward kernel (used to push measures or samples forward)
with a backward kernel (used to pull potentials back). Running the backward
map on a potential ``g`` produces the pulled-back potential and a message
``m(x, y) = g(y) / (backward g)(x)``; the forward map then pushes a measure
through ``m(x, y) forward(x, dy)``. Programs built from ``Seq`` and ``Par``
thread both passes through whole computational graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NumericalError,
    ShapeError,
    SpaceMismatchError,
    UnsupportedPairingError,
    ZeroDenominatorError,
)
from .kernels import (
    DiscreteKernel,
    DuplicationKernel,
    IdentityKernel,
    LinearGaussian,
    TensorKernel,
    compose_kernels,
    pullback,
    pushforward,
    tensor_kernels,
)
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
    cov_factor,
    dim,
    flatten_measure,
    flatten_potential,
    gaussian_tilt,
    is_discrete,
    log_evaluate,
    size,
    total_mass,
    unflatten_index,
)


@dataclass(frozen=True, eq=False)
class Message:
    """m(x, y) = numerator(y) / denominator(x)."""

    numerator: object
    denominator: object

    def log_value(self, x, y):
        den = log_evaluate(self.denominator, x)
        if den == -math.inf:
            raise ZeroDenominatorError(f"message denominator vanishes at {x!r}")
        return log_evaluate(self.numerator, y) - den

    def __call__(self, x, y):
        return math.exp(self.log_value(x, y))


UNIT_MESSAGE = Message(ONE, ONE)


@dataclass(frozen=True, eq=False)
class Optic:
    """Forward kernel paired with the backward kernel used to build messages."""

    forward: object
    backward: object = None

    def __post_init__(self):
        if self.backward is None:
            object.__setattr__(self, "backward", self.forward)
        if self.forward.source != self.backward.source or self.forward.target != self.backward.target:
            raise SpaceMismatchError("forward and backward kernels must share source and target spaces")
        deterministic = (IdentityKernel, DuplicationKernel)
        if isinstance(self.forward, deterministic) and type(self.backward) is not type(self.forward):
            # the weight g / (backward g) of such a pair is not implemented; use an explicit matrix instead
            raise UnsupportedPairingError(
                f"forward kernel {type(self.forward).__name__} needs a backward kernel of the same kind,"
                f" got {type(self.backward).__name__}"
            )

    @property
    def source(self):
        return self.forward.source

    @property
    def target(self):
        return self.forward.target

    @property
    def exact(self):
        return self.backward is self.forward


def identity_optic(space):
    k = IdentityKernel(space)
    return Optic(k, k)


def duplication_optic(space):
    k = DuplicationKernel(space)
    return Optic(k, k)


# --------------------------------------------------------------------------
# single optic
# --------------------------------------------------------------------------


def backward_map(o, h):
    """(message, backward h) for potential ``h`` on the optic's target."""
    pulled = pullback(o.backward, h)
    return Message(h, pulled), pulled


def forward_pullback(o, m):
    """forward g, where g is the message numerator."""
    return pullback(o.forward, m.numerator)


def _ones_or_values(h, space):
    h = flatten_potential(h, space)
    return np.ones(size(space)) if isinstance(h, One) else h.values


def _quadratic_terms(h, space):
    h = flatten_potential(h, space)
    if isinstance(h, One):
        d = dim(space)
        return 0.0, np.zeros(d), np.zeros((d, d))
    if not isinstance(h, GaussianQuadratic):
        raise UnsupportedPairingError(f"expected a Gaussian potential, got {type(h).__name__}")
    return h.logc, h.F, h.H


def _log_ratio_terms(o, m):
    """(logc, F, H) of x -> log (forward g)(x) - log (backward g)(x) for Gaussian families."""
    a = _quadratic_terms(forward_pullback(o, m), o.source)
    b = _quadratic_terms(m.denominator, o.source)
    return a[0] - b[0], a[1] - b[1], a[2] - b[2]


def log_weight_at(o, m, x):
    """log w(m, delta_x) = log (forward g)(x) - log (backward g)(x)."""
    den = log_evaluate(m.denominator, x)
    if den == -math.inf:
        raise ZeroDenominatorError(f"message denominator vanishes at {x!r}")
    if o.exact or isinstance(o.forward, (IdentityKernel, DuplicationKernel)):
        return 0.0
    return log_evaluate(forward_pullback(o, m), x) - den


def _split_measure(mu, n):
    if isinstance(mu, ProductMeasure) and len(mu.factors) == n:
        return list(mu.factors)
    if isinstance(mu, DiracMass) and isinstance(mu.point, tuple) and len(mu.point) == n:
        return [DiracMass(p, mu.mass if i == 0 else 1.0) for i, p in enumerate(mu.point)]
    raise UnsupportedPairingError(
        "parallel composition can only push forward a product measure or a Dirac mass"
    )


def _split_potential(h, n):
    if isinstance(h, One):
        return [ONE] * n
    if isinstance(h, ProductPotential) and len(h.factors) == n:
        return list(h.factors)
    raise UnsupportedPairingError(f"parallel composition of {n} optics needs a {n}-fold product potential")


def _check_support(mu, den, space):
    """Raise if mu charges a point where the message denominator vanishes."""
    if isinstance(mu, DiracMass):
        if mu.mass > 0 and log_evaluate(den, mu.point) == -math.inf:
            raise ZeroDenominatorError(f"message denominator vanishes at {mu.point!r}")
        return
    if isinstance(den, One) or not is_discrete(space):
        return
    w = flatten_measure(mu, space).weights
    d = _ones_or_values(den, space)
    bad = np.flatnonzero((w > 0) & (d <= 0))
    if bad.size:
        raise ZeroDenominatorError(f"message denominator vanishes at flat index {int(bad[0])}")


def forward_map(o, m, mu):
    """The measure ∫ m(x, y) mu(dx) forward(x, dy)."""
    k = o.forward
    if isinstance(k, (IdentityKernel, DuplicationKernel)):
        _check_support(mu, m.denominator, o.source)
        return pushforward(k, mu)
    if isinstance(k, TensorKernel):
        nums = _split_potential(m.numerator, len(k.factors))
        dens = _split_potential(m.denominator, len(k.factors))
        parts = _split_measure(mu, len(k.factors))
        bk = o.backward.factors if isinstance(o.backward, TensorKernel) else k.factors
        return ProductMeasure(
            [
                forward_map(Optic(f, b), Message(n, d), p)
                for f, b, n, d, p in zip(k.factors, bk, nums, dens, parts)
            ]
        )
    if isinstance(k, DiscreteKernel):
        w = flatten_measure(mu, k.source).weights
        g = _ones_or_values(m.numerator, k.target)
        d = _ones_or_values(m.denominator, k.source)
        bad = np.flatnonzero((w > 0) & (d <= 0))
        if bad.size:
            raise ZeroDenominatorError(f"message denominator vanishes at flat index {int(bad[0])}")
        ratio = np.divide(w, d, out=np.zeros_like(w), where=w > 0)
        return DiscreteMeasure((ratio @ k.matrix) * g, k.target)
    if isinstance(k, LinearGaussian):
        guided = guided_kernel(o, m)
        if isinstance(mu, DiracMass):
            mass = mu.mass * math.exp(log_weight_at(o, m, mu.point)) if mu.mass > 0 else 0.0
            return WeightedGaussian(mass, guided.mean(mu.point), guided.Q, k.target)
        mu = flatten_measure(mu, k.source)
        if not isinstance(mu, WeightedGaussian):
            raise UnsupportedPairingError("a linear-Gaussian optic needs a Gaussian or Dirac measure")
        if mu.mass == 0:
            return WeightedGaussian(0.0, guided.B @ mu.mean + guided.beta, guided.Q, k.target)
        # reweight mu by forward g / backward g, then push through the guided kernel
        logc, F, H = _log_ratio_terms(o, m)
        t = gaussian_tilt(F, H, cov_factor(mu.cov))
        mass = mu.mass * math.exp(logc + t.log_integral(mu.mean))
        mean = t.tilted_mean(mu.mean, F, H)
        cov = guided.B @ t.K @ guided.B.T + guided.Q
        return WeightedGaussian(mass, guided.B @ mean + guided.beta, cov, k.target)
    raise UnsupportedPairingError(f"no closed-form forward map for {type(k).__name__}")


def weight(o, m, mu):
    """Weight picked up by pushing the probability measure mu / |mu| forward."""
    if isinstance(mu, DiracMass):
        return math.exp(log_weight_at(o, m, mu.point))
    mass = total_mass(mu)
    if not mass > 0:
        raise NumericalError("weight of a zero measure is undefined")
    return total_mass(forward_map(o, m, mu)) / mass


def _guided_discrete_matrix(K, g):
    """Rows g(y) K(x, y) / sum_y g(y) K(x, y); rows with zero normalizer stay zero."""
    G = K * g[None, :]
    norm = G.sum(axis=1)
    G = np.divide(G, norm[:, None], out=np.zeros_like(G), where=norm[:, None] > 0)
    return G, norm


def guided_kernel(o, m):
    """The Markov kernel y ~ g(y) forward(x, dy) / (forward g)(x)."""
    k = o.forward
    if isinstance(m.numerator, One) or isinstance(k, (IdentityKernel, DuplicationKernel)):
        return k
    if isinstance(k, DiscreteKernel):
        G, norm = _guided_discrete_matrix(k.matrix, _ones_or_values(m.numerator, k.target))
        bad = np.flatnonzero(norm <= 0)
        if bad.size:
            x = unflatten_index(k.source, int(bad[0]))
            raise NumericalError(f"guided kernel undefined: observations impossible from source point {x!r}")
        return DiscreteKernel(G, k.source, k.target)
    if isinstance(k, LinearGaussian):
        g = flatten_potential(m.numerator, k.target)
        if not isinstance(g, GaussianQuadratic):
            raise UnsupportedPairingError("a linear-Gaussian guided kernel needs a Gaussian numerator")
        t = gaussian_tilt(g.F, g.H, k._chol)
        A = np.eye(g.dimension) - t.K @ g.H
        try:
            return LinearGaussian(A @ k.B, A @ k.beta + t.K @ g.F, t.K, k.source, k.target)
        except ShapeError as exc:
            raise NumericalError(f"guided covariance is degenerate: {exc}") from None
    if isinstance(k, TensorKernel):
        nums = _split_potential(m.numerator, len(k.factors))
        return TensorKernel([guided_kernel(Optic(f), Message(n, ONE)) for f, n in zip(k.factors, nums)])
    raise UnsupportedPairingError(f"no guided kernel for {type(k).__name__}")


# --------------------------------------------------------------------------
# programs
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prim:
    optic: Optic
    label: object = None

    @property
    def source(self):
        return self.optic.source

    @property
    def target(self):
        return self.optic.target


@dataclass(frozen=True, init=False, eq=False)
class Seq:
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        flat = []
        for c in children:
            flat.extend(c.children if isinstance(c, Seq) else [c])
        if not flat:
            raise ShapeError("a sequential program needs at least one child")
        for a, b in zip(flat, flat[1:]):
            if a.target != b.source:
                raise SpaceMismatchError(f"cannot compose: {a.target} != {b.source}")
        object.__setattr__(self, "children", tuple(flat))

    @property
    def source(self):
        return self.children[0].source

    @property
    def target(self):
        return self.children[-1].target


@dataclass(frozen=True, init=False, eq=False)
class Par:
    children: tuple

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise ShapeError("a parallel program needs at least two children")
        object.__setattr__(self, "children", tuple(children))

    @property
    def source(self):
        return Product([c.source for c in self.children])

    @property
    def target(self):
        return Product([c.target for c in self.children])


def seq_compose(p1, p2):
    return Seq(p1, p2)


def par_compose(p1, p2):
    return Par(p1, p2)


def iter_prims(p):
    if isinstance(p, Prim):
        yield p
    else:
        for c in p.children:
            yield from iter_prims(c)


@dataclass(frozen=True, eq=False)
class BackwardPassState:
    """Result of a backward pass.

    ``pulled_back * exp(log_scale)`` is the potential at the program's
    source; ``message`` is set on primitive nodes and ``children`` mirrors
    the program's shape.
    """

    pulled_back: object
    message: Message = None
    children: tuple = ()
    log_scale: float = 0.0


def _node(label):
    return None if label is None else f"node {label}"


def label_context(exc, label):
    """Attach ``node <label>`` to a numerical error that has no context yet."""
    if isinstance(exc, NumericalError) and exc.context is None and label is not None:
        exc.context = _node(label)
    return exc


def run_backward(p, h, rescale=False):
    """Pull ``h`` back through ``p`` right-to-left, keeping every message.

    With ``rescale`` the discrete potentials handed from one optic to the
    next are divided by their maximum; messages stay exact because each
    denominator is built from the rescaled numerator.
    """
    if isinstance(p, Prim):
        try:
            m, pulled = backward_map(p.optic, h)
        except NumericalError as exc:
            raise label_context(exc, p.label)
        log_scale = 0.0
        if rescale and isinstance(pulled, DiscreteVec):
            c = float(pulled.values.max())
            if not c > 0:
                raise NumericalError("observations are impossible: pulled-back potential vanishes", _node(p.label))
            pulled = DiscreteVec(pulled.values / c, pulled.space)
            log_scale = math.log(c)
        return BackwardPassState(pulled, m, (), log_scale)
    if isinstance(p, Seq):
        states = []
        for child in reversed(p.children):
            st = run_backward(child, h, rescale)
            states.append(st)
            h = st.pulled_back
        states.reverse()
        return BackwardPassState(h, None, tuple(states), sum(s.log_scale for s in states))
    parts = _split_potential(h, len(p.children))
    states = tuple(run_backward(c, g, rescale) for c, g in zip(p.children, parts))
    pulled = [s.pulled_back for s in states]
    out = ONE if all(isinstance(g, One) for g in pulled) else ProductPotential(pulled)
    return BackwardPassState(out, None, states, sum(s.log_scale for s in states))


def run_forward_measure(p, s, mu, record=None):
    """Push ``mu`` left-to-right through ``p`` using the messages in ``s``.

    ``record(label, measure)`` is called after every labelled primitive.
    """
    if isinstance(p, Prim):
        nu = forward_map(p.optic, s.message, mu)
        if record is not None and p.label is not None:
            record(p.label, nu)
        return nu
    if isinstance(p, Seq):
        for child, st in zip(p.children, s.children):
            mu = run_forward_measure(child, st, mu, record)
        return mu
    parts = _split_measure(mu, len(p.children))
    return ProductMeasure([run_forward_measure(c, st, m, record) for c, st, m in zip(p.children, s.children, parts)])


def collect_messages(p, s, out=None):
    """Map every labelled primitive's label to its (optic, message)."""
    out = {} if out is None else out
    if isinstance(p, Prim):
        if p.label is not None:
            out[p.label] = (p.optic, s.message)
    else:
        for c, st in zip(p.children, s.children):
            collect_messages(c, st, out)
    return out


# --------------------------------------------------------------------------
# equivalence checks
# --------------------------------------------------------------------------


def random_point(space, rng):
    if isinstance(space, Finite):
        return int(rng.integers(space.cardinality))
    if isinstance(space, Euclidean):
        return rng.normal(size=space.dimension)
    return tuple(random_point(f, rng) for f in space.factors)


def measure_deviation(a, b, space):
    """Max-norm distance between the flat representations of two measures.

    Masses and discrete weights are measured in units of ``max(1, mass of b)``:
    approximate backward kernels can produce masses far above one, where an
    absolute comparison would only measure rounding.
    """
    a, b = flatten_measure(a, space), flatten_measure(b, space)
    scale = max(1.0, abs(total_mass(b)))
    if isinstance(a, DiscreteMeasure):
        return float(np.max(np.abs(a.weights - b.weights))) / scale
    return float(
        max(
            abs(a.mass - b.mass) / scale,
            np.max(np.abs(a.mean - b.mean)),
            np.max(np.abs(a.cov - b.cov)),
        )
    )


@dataclass
class EquivalenceReport:
    max_abs_deviation: float
    message_deviation: float
    normalization_deviation: float = None
    details: dict = field(default_factory=dict)

    @property
    def worst(self):
        return max(self.max_abs_deviation, self.message_deviation)


def _rel(a, b):
    return abs(a - b) / max(abs(b), np.finfo(float).tiny)


def _probe_source(m, space, rng, tries=100):
    for _ in range(tries):
        x = random_point(space, rng)
        if log_evaluate(m.denominator, x) > -math.inf:
            return x
    raise NumericalError("could not find a source point with positive message denominator")


def check_sequential_equivalence(k01, kt01, k12, kt12, h, mu, rng=None, n_probes=10):
    """Compare composing kernels then forming the optic with composing the two optics."""
    rng = np.random.default_rng(0) if rng is None else rng
    o02 = Optic(compose_kernels(k01, k12), compose_kernels(kt01, kt12))
    m02, _ = backward_map(o02, h)
    nu_composed = forward_map(o02, m02, mu)

    prog = Seq(Prim(Optic(k01, kt01)), Prim(Optic(k12, kt12)))
    st = run_backward(prog, h)
    nu_chained = run_forward_measure(prog, st, mu)
    dev = measure_deviation(nu_composed, nu_chained, k12.target)

    m01, m12 = st.children[0].message, st.children[1].message
    x = _probe_source(m02, k01.source, rng)
    y = random_point(k12.target, rng)
    ref = m02(x, y)
    msg_dev = 0.0
    for _ in range(n_probes):
        z = _probe_source(m12, k01.target, rng)
        msg_dev = max(msg_dev, _rel(m01(x, z) * m12(z, y), ref))

    norm_dev = None
    if kt01 is k01 and kt12 is k12:
        norm_dev = abs(total_mass(nu_chained) - total_mass(mu))
    return EquivalenceReport(dev, msg_dev, norm_dev)


def check_parallel_equivalence(k1, kt1, k2, kt2, g1, g2, mu1, mu2, rng=None, n_probes=10):
    """Compare tensoring kernels then forming the optic with tensoring the two optics."""
    rng = np.random.default_rng(0) if rng is None else rng
    h = ProductPotential(g1, g2)
    mu = ProductMeasure(mu1, mu2)
    o12 = Optic(tensor_kernels(k1, k2), tensor_kernels(kt1, kt2))
    m12, _ = backward_map(o12, h)
    nu_tensored = forward_map(o12, m12, mu)

    prog = Par(Prim(Optic(k1, kt1)), Prim(Optic(k2, kt2)))
    st = run_backward(prog, h)
    nu_par = run_forward_measure(prog, st, mu)
    dev = measure_deviation(nu_tensored, nu_par, o12.target)

    ma, mb = st.children[0].message, st.children[1].message
    msg_dev = 0.0
    for _ in range(n_probes):
        x = _probe_source(m12, o12.source, rng)
        y = random_point(o12.target, rng)
        msg_dev = max(msg_dev, _rel(ma(x[0], y[0]) * mb(x[1], y[1]), m12(x, y)))

    norm_dev = None
    if kt1 is k1 and kt2 is k2:
        norm_dev = abs(total_mass(nu_par) - total_mass(mu))
    return EquivalenceReport(dev, msg_dev, norm_dev)
