"""Backward filtering, forward guiding for Markov processes on directed trees."""

from .errors import (
    BFFGError,
    ModelError,
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
    ObservationModel,
    compose_kernels,
    observation_potential,
    pullback,
    pushforward,
    tensor_kernels,
)
from .optics import Message, Optic, Par, Prim, Seq, backward_map, forward_map, guided_kernel, weight
from .rng import RandomStream
from .sampling import GuidedSample, forward_sampling_duplicate, forward_sampling_map, run_forward_sampling
from .spaces import (
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
)
from .tree import Edge, Node, TreeModel, compile_tree, run_bffg_exact, run_bffg_sampling

__version__ = "0.1.0"
