"""Random problem instances for the equivalence checks, the acceptance suite and the scripts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .kernels import DiscreteKernel, IdentityKernel, LinearGaussian, compose_kernels, tensor_kernels
from .optics import Optic, backward_map, check_parallel_equivalence, check_sequential_equivalence, weight
from .spaces import (
    DiracMass,
    DiscreteMeasure,
    DiscreteVec,
    Euclidean,
    Finite,
    GaussianQuadratic,
    ProductMeasure,
    ProductPotential,
    WeightedGaussian,
)
from .tree import Edge, Node, TreeModel

FAMILIES = ("discrete", "gaussian", "identity")


@dataclass(frozen=True)
class InstanceConfig:
    min_states: int = 2
    max_states: int = 5
    dimension: int = 2
    approximate_backward: bool = True  # draw a separate backward kernel
    dirac_probability: float = 0.25  # Gaussian instances: chance that mu is a point mass


def random_stochastic(rng, rows, cols, concentration=1.0):
    return rng.dirichlet(np.full(cols, concentration), size=rows)


def random_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))


def random_discrete_kernel(rng, n, m):
    return DiscreteKernel(random_stochastic(rng, n, m), Finite(n), Finite(m))


def random_lg_kernel(rng, d_in, d_out, contraction=0.9):
    B = rng.normal(size=(d_out, d_in))
    B *= contraction / max(1.0, np.linalg.norm(B, 2))
    return LinearGaussian(B, rng.normal(size=d_out) * 0.5, random_spd(rng, d_out, 0.5), Euclidean(d_in), Euclidean(d_out))


def random_discrete_potential(rng, n):
    return DiscreteVec(rng.uniform(0.05, 1.0, size=n))


def random_gaussian_potential(rng, d):
    return GaussianQuadratic(rng.normal() * 0.3, rng.normal(size=d), random_spd(rng, d, 0.5))


def random_discrete_measure(rng, n):
    return DiscreteMeasure(rng.dirichlet(np.ones(n)))


def random_gaussian_measure(rng, d, cfg):
    if rng.uniform() < cfg.dirac_probability:
        return DiracMass(rng.normal(size=d))
    return WeightedGaussian(1.0, rng.normal(size=d), random_spd(rng, d, 0.5))


def _backward_for(rng, k, make, cfg):
    return make() if cfg.approximate_backward and rng.uniform() < 0.5 else k


# --------------------------------------------------------------------------
# equivalence-check instances
# --------------------------------------------------------------------------


def sequential_instance(rng, family, cfg=InstanceConfig()):
    """Keyword arguments for ``check_sequential_equivalence``."""
    if family == "discrete":
        n0, n1, n2 = rng.integers(cfg.min_states, cfg.max_states + 1, size=3)
        k01, k12 = random_discrete_kernel(rng, n0, n1), random_discrete_kernel(rng, n1, n2)
        kt01 = _backward_for(rng, k01, lambda: random_discrete_kernel(rng, n0, n1), cfg)
        kt12 = _backward_for(rng, k12, lambda: random_discrete_kernel(rng, n1, n2), cfg)
        h, mu = random_discrete_potential(rng, n2), random_discrete_measure(rng, n0)
    elif family == "gaussian":
        d = cfg.dimension
        k01, k12 = random_lg_kernel(rng, d, d), random_lg_kernel(rng, d, d)
        kt01 = _backward_for(rng, k01, lambda: random_lg_kernel(rng, d, d), cfg)
        kt12 = _backward_for(rng, k12, lambda: random_lg_kernel(rng, d, d), cfg)
        h, mu = random_gaussian_potential(rng, d), random_gaussian_measure(rng, d, cfg)
    elif family == "identity":
        n = int(rng.integers(cfg.min_states, cfg.max_states + 1))
        k01 = kt01 = k12 = kt12 = IdentityKernel(Finite(n))
        h, mu = random_discrete_potential(rng, n), random_discrete_measure(rng, n)
    else:
        raise ValueError(f"unknown family {family!r}")
    return dict(k01=k01, kt01=kt01, k12=k12, kt12=kt12, h=h, mu=mu)


def parallel_instance(rng, family, cfg=InstanceConfig()):
    """Keyword arguments for ``check_parallel_equivalence``."""
    out = {}
    for i in ("1", "2"):
        if family == "discrete":
            n, m = rng.integers(cfg.min_states, cfg.max_states + 1, size=2)
            k = random_discrete_kernel(rng, n, m)
            kt = _backward_for(rng, k, lambda: random_discrete_kernel(rng, n, m), cfg)
            g, mu = random_discrete_potential(rng, m), random_discrete_measure(rng, n)
        elif family == "gaussian":
            d = cfg.dimension
            k = random_lg_kernel(rng, d, d)
            kt = _backward_for(rng, k, lambda: random_lg_kernel(rng, d, d), cfg)
            g, mu = random_gaussian_potential(rng, d), random_gaussian_measure(rng, d, cfg)
        elif family == "identity":
            n = int(rng.integers(cfg.min_states, cfg.max_states + 1))
            k = kt = IdentityKernel(Finite(n))
            g, mu = random_discrete_potential(rng, n), random_discrete_measure(rng, n)
        else:
            raise ValueError(f"unknown family {family!r}")
        out.update({f"k{i}": k, f"kt{i}": kt, f"g{i}": g, f"mu{i}": mu})
    return out


@dataclass
class TrialOutcome:
    seed: int
    family: str
    check: str  # "sequential" or "parallel"
    deviation: float
    message_deviation: float

    @property
    def worst(self):
        return max(self.deviation, self.message_deviation)


def families_for(choice):
    if choice == "both":
        return ("discrete", "gaussian")
    if choice not in FAMILIES:
        raise ValueError(f"unknown family {choice!r}")
    return (choice,)


def _weight_is_finite(forward, backward, h, mu):
    """Whether the composite optic has a finite weight against ``mu``.

    With Gaussian measures and a backward kernel that differs from the
    forward one, the weight integrand can grow faster than ``mu`` decays.
    """
    o = Optic(forward, backward)
    try:
        return np.isfinite(weight(o, backward_map(o, h)[0], mu))
    except NumericalError:
        return False


def _draw(rng, make, composite, max_draws=100):
    for _ in range(max_draws):
        inst = make()
        if _weight_is_finite(*composite(inst)):
            return inst
    raise NumericalError(f"no instance with finite weight in {max_draws} draws")


def run_trial(seed, family, cfg=InstanceConfig()):
    """Both equivalence checks on the instance determined by ``seed``.

    Instances whose weight integral diverges are redrawn from the same
    generator, so a seed still fixes the trial.
    """
    rng = np.random.default_rng(seed)
    seq_inst = _draw(
        rng,
        lambda: sequential_instance(rng, family, cfg),
        lambda d: (compose_kernels(d["k01"], d["k12"]), compose_kernels(d["kt01"], d["kt12"]), d["h"], d["mu"]),
    )
    seq = check_sequential_equivalence(**seq_inst, rng=rng)
    par_inst = _draw(
        rng,
        lambda: parallel_instance(rng, family, cfg),
        lambda d: (
            tensor_kernels(d["k1"], d["k2"]),
            tensor_kernels(d["kt1"], d["kt2"]),
            ProductPotential(d["g1"], d["g2"]),
            ProductMeasure(d["mu1"], d["mu2"]),
        ),
    )
    par = check_parallel_equivalence(**par_inst, rng=rng)
    return [
        TrialOutcome(seed, family, "sequential", seq.max_abs_deviation, seq.message_deviation),
        TrialOutcome(seed, family, "parallel", par.max_abs_deviation, par.message_deviation),
    ]


def run_verification(trials, seed, family="both", cfg=InstanceConfig()):
    """Trial ``i`` of each family uses seed ``seed + i``."""
    return [o for fam in families_for(family) for i in range(trials) for o in run_trial(seed + i, fam, cfg)]


# --------------------------------------------------------------------------
# tree models
# --------------------------------------------------------------------------


def hmm_chain(transitions, emission, root_value, observations, backward=None):
    """A chain root -> x1 -> ... -> xn with an observed leaf y_i under every x_i."""
    n = len(transitions)
    s = transitions[0].shape[0]
    o = emission.shape[1]
    nodes = [Node("root", Finite(s), "root")]
    edges = []
    prev = "root"
    for i in range(1, n + 1):
        nodes += [Node(f"x{i}", Finite(s), "latent"), Node(f"y{i}", Finite(o), "leaf")]
        k = DiscreteKernel(transitions[i - 1], Finite(s), Finite(s))
        kt = None if backward is None else DiscreteKernel(backward[i - 1], Finite(s), Finite(s))
        edges += [
            Edge(prev, f"x{i}", k, kt),
            Edge(f"x{i}", f"y{i}", DiscreteKernel(emission, Finite(s), Finite(o))),
        ]
        prev = f"x{i}"
    obs = {f"y{i}": int(v) for i, v in enumerate(observations, start=1)}
    return TreeModel(nodes, edges, root_value, obs)


def random_hmm(rng, states=3, length=6, symbols=3, degraded=False):
    transitions = [random_stochastic(rng, states, states) for _ in range(length)]
    emission = random_stochastic(rng, states, symbols)
    obs = rng.integers(symbols, size=length)
    backward = [np.full((states, states), 1.0 / states)] * length if degraded else None
    return hmm_chain(transitions, emission, int(rng.integers(states)), obs, backward)


def branching_tree(rng, min_states=2, max_states=3):
    """The two-leaf tree r -> t1 -> t2, t2 -> t3 -> v1, t2 -> t4 -> v2 with random kernels."""
    sizes = {n: int(rng.integers(min_states, max_states + 1)) for n in ("r", "t1", "t2", "t3", "t4", "v1", "v2")}
    roles = {"r": "root", "v1": "leaf", "v2": "leaf"}
    nodes = [Node(n, Finite(s), roles.get(n, "latent")) for n, s in sizes.items()]
    pairs = [("r", "t1"), ("t1", "t2"), ("t2", "t3"), ("t2", "t4"), ("t3", "v1"), ("t4", "v2")]
    edges = [Edge(a, b, random_discrete_kernel(rng, sizes[a], sizes[b])) for a, b in pairs]
    obs = {v: int(rng.integers(sizes[v])) for v in ("v1", "v2")}
    return TreeModel(nodes, edges, int(rng.integers(sizes["r"])), obs)


def lg_chain(transitions, observation_kernels, root_value, observations):
    """A Gaussian chain with an observed leaf under every latent node; returns the model."""
    d = transitions[0].B.shape[0]
    nodes = [Node("root", Euclidean(d), "root")]
    edges, obs = [], {}
    prev = "root"
    for i, (k, ok, v) in enumerate(zip(transitions, observation_kernels, observations), start=1):
        nodes += [Node(f"x{i}", Euclidean(d), "latent"), Node(f"y{i}", ok.target, "leaf")]
        edges += [Edge(prev, f"x{i}", k), Edge(f"x{i}", f"y{i}", ok)]
        obs[f"y{i}"] = np.asarray(v, dtype=float)
        prev = f"x{i}"
    return TreeModel(nodes, edges, np.asarray(root_value, dtype=float), obs)


def random_lg_chain(rng, d=2, length=10, obs_dim=None):
    """(model, transitions, observation kernels, observations, root value)."""
    obs_dim = d if obs_dim is None else obs_dim
    transitions = [random_lg_kernel(rng, d, d, contraction=0.95) for _ in range(length)]
    oks = [random_lg_kernel(rng, d, obs_dim, contraction=1.0) for _ in range(length)]
    root = rng.normal(size=d)
    obs = [rng.normal(size=obs_dim) * 2 for _ in range(length)]
    return lg_chain(transitions, oks, root, obs), transitions, oks, obs, root
