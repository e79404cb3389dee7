"""Stochastic processes on directed trees and the end-to-end smoothing drivers."""

from __future__ import annotations

import functools
import math
import os
import sys
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BFFGError, ModelError, NumericalError, UnsupportedPairingError
from .kernels import ObservationModel, is_closed_form, observation_potential
from .optics import (
    Optic,
    Par,
    Prim,
    Seq,
    collect_messages,
    duplication_optic,
    forward_map,
    identity_optic,
    run_backward,
)
from .rng import replicate_stream
from .sampling import GuidedSample, PopulationPlan, SamplingPlan, effective_sample_size
from .spaces import (
    DiracMass,
    ProductPotential,
    flat_index,
    flat_vector,
    flatten_measure,
    is_continuous,
    is_discrete,
    log_evaluate,
    normalize,
    size,
    validate_point,
)

ROLES = ("root", "latent", "leaf")


@dataclass(frozen=True)
class Node:
    id: str
    space: object
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ModelError(f"node {self.id!r}: role must be one of {ROLES}")


@dataclass(frozen=True, eq=False)
class Edge:
    parent: str
    child: str
    kernel: object
    backward: object = None  # None: use the forward kernel

    @property
    def optic(self):
        return Optic(self.kernel, self.backward)


@dataclass(eq=False)
class TreeModel:
    nodes: list
    edges: list
    root_value: object
    observations: dict

    def __post_init__(self):
        self.nodes = list(self.nodes)
        self.edges = list(self.edges)
        self.observations = dict(self.observations)
        self._by_id = {}
        for n in self.nodes:
            if n.id in self._by_id:
                raise ModelError(f"duplicate node id {n.id!r}")
            self._by_id[n.id] = n
        roots = [n.id for n in self.nodes if n.role == "root"]
        if len(roots) != 1:
            raise ModelError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        self._children = {n.id: [] for n in self.nodes}
        self._parent_edge = {}
        for e in self.edges:
            for end in (e.parent, e.child):
                if end not in self._by_id:
                    raise ModelError(f"edge {e.parent!r}->{e.child!r} references unknown node {end!r}")
            if e.child in self._parent_edge:
                raise ModelError(f"node {e.child!r} has more than one parent")
            if e.child == self.root:
                raise ModelError("the root cannot have a parent")
            self._parent_edge[e.child] = e
            self._children[e.parent].append(e)
        for n in self.nodes:
            if n.id != self.root and n.id not in self._parent_edge:
                raise ModelError(f"node {n.id!r} has no parent")
        seen = set(self.bfs_order())
        if len(seen) != len(self.nodes):
            raise ModelError("the graph is not a tree reachable from the root")
        for n in self.nodes:
            has_children = bool(self._children[n.id])
            if n.role == "leaf":
                if has_children:
                    raise ModelError(f"leaf {n.id!r} has children")
                if n.id not in self.observations:
                    raise ModelError(f"leaf {n.id!r} has no observation")
            elif n.role == "latent" and not has_children:
                raise ModelError(f"latent node {n.id!r} has no children")
        for leaf in self.observations:
            if leaf not in self._by_id or self._by_id[leaf].role != "leaf":
                raise ModelError(f"observation given for non-leaf {leaf!r}")
        for e in self.edges:
            src, tgt = self._by_id[e.parent].space, self._by_id[e.child].space
            for k in (e.kernel, e.backward):
                if k is not None and (k.source != src or k.target != tgt):
                    raise ModelError(f"edge {e.parent!r}->{e.child!r}: kernel spaces do not match node spaces")
            if self._by_id[e.child].role == "leaf" and e.backward is not None and e.backward is not e.kernel:
                raise ModelError(f"observation edge {e.parent!r}->{e.child!r} must use the same kernel backward")
        try:
            validate_point(self._by_id[self.root].space, self.root_value)
            for leaf, v in self.observations.items():
                validate_point(self._by_id[leaf].space, v)
        except BFFGError as exc:
            raise ModelError(str(exc)) from None

    def node(self, node_id):
        return self._by_id[node_id]

    def children(self, node_id):
        return list(self._children[node_id])

    def parent_edge(self, node_id):
        return self._parent_edge[node_id]

    def bfs_order(self):
        order, queue = [], deque([self.root])
        while queue:
            n = queue.popleft()
            order.append(n)
            queue.extend(e.child for e in self._children[n])
        return order

    @property
    def latent_ids(self):
        return [n for n in self.bfs_order() if self._by_id[n].role == "latent"]

    def observation_model(self, leaf):
        return ObservationModel(self.parent_edge(leaf).kernel, self.observations[leaf])


# --------------------------------------------------------------------------
# compilation
# --------------------------------------------------------------------------


FRAMES_PER_NODE = 40


def _deep_trees(fn):
    """Raise the interpreter recursion limit in proportion to the tree size.

    Programs nest one level per edge and are walked recursively, so a long
    chain needs more frames than the default limit allows.
    """

    @functools.wraps(fn)
    def wrapper(t, *args, **kwargs):
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 1000 + FRAMES_PER_NODE * len(t.nodes)))
        try:
            return fn(t, *args, **kwargs)
        finally:
            sys.setrecursionlimit(old)

    return wrapper


def _node_program(t, node_id):
    """(program or None, potential) for the subtree hanging below ``node_id``.

    ``None`` stands for the identity program on the node's space.
    """
    space = t.node(node_id).space
    branches = []
    for e in t.children(node_id):
        if t.node(e.child).role == "leaf":
            try:
                pot = observation_potential(t.observation_model(e.child))
            except NumericalError as exc:
                raise _with_context(exc, f"edge {e.parent}->{e.child}")
            branches.append((None, pot))
        else:
            sub, pot = _node_program(t, e.child)
            prim = Prim(e.optic, label=e.child)
            branches.append((prim if sub is None else Seq(prim, sub), pot))
    return _cascade(space, branches)


def _cascade(space, branches):
    if len(branches) == 1:
        return branches[0]
    head, head_pot = branches[0]
    tail, tail_pot = _cascade(space, branches[1:])
    par = Par(
        head if head is not None else Prim(identity_optic(space)),
        tail if tail is not None else Prim(identity_optic(space)),
    )
    return Seq(Prim(duplication_optic(space)), par), ProductPotential(head_pot, tail_pot)


@_deep_trees
def compile_with_potential(t):
    prog, pot = _node_program(t, t.root)
    if prog is None:
        prog = Prim(identity_optic(t.node(t.root).space))
    return prog, pot


def compile_tree(t):
    """The optic program of ``t``; observation edges are folded into the initial potential."""
    return compile_with_potential(t)[0]


def initial_potential(t):
    return compile_with_potential(t)[1]


# --------------------------------------------------------------------------
# drivers
# --------------------------------------------------------------------------


@dataclass
class SmoothingResult:
    mode: str
    evidence: float
    log_evidence: float
    marginals: dict = field(default_factory=dict)
    log_weights: np.ndarray = None
    trajectories: dict = None
    estimates: dict = None
    seed: int = None
    backward_log_evidence: float = None

    @property
    def weights(self):
        return None if self.log_weights is None else np.exp(self.log_weights)

    @property
    def ess(self):
        return None if self.log_weights is None else effective_sample_size(self.log_weights)


def _backward(t):
    prog, pot = compile_with_potential(t)
    state = run_backward(prog, pot, rescale=True)
    log_ev = log_evaluate(state.pulled_back, t.root_value) + state.log_scale
    return prog, state, log_ev


def _with_context(exc, context):
    if isinstance(exc, NumericalError) and exc.context is None:
        exc.context = context
    return exc


@_deep_trees
def run_bffg_exact(t):
    """Backward filter, then push the root Dirac mass forward edge by edge.

    The marginal recorded at a node is the normalized output of the forward
    map on its incoming edge. When every backward kernel equals its forward
    kernel these are the smoothing marginals and the evidence is the
    likelihood of the observations.
    """
    for e in t.edges:
        for k in (e.kernel, e.backward):
            if k is not None and not is_closed_form(k):
                raise UnsupportedPairingError(
                    f"edge {e.parent}->{e.child}: {type(k).__name__} has no closed form"
                )
    try:
        prog, state, log_ev = _backward(t)
    except NumericalError as exc:
        raise _with_context(exc, "backward pass") from None
    messages = collect_messages(prog, state)
    measures = {t.root: DiracMass(t.root_value)}
    for node_id in t.latent_ids:
        e = t.parent_edge(node_id)
        optic, message = messages[node_id]
        try:
            measures[node_id] = normalize(forward_map(optic, message, measures[e.parent]))
        except NumericalError as exc:
            raise _with_context(exc, f"edge {e.parent}->{node_id}") from None
    marginals = {n: flatten_measure(measures[n], t.node(n).space) for n in t.latent_ids}
    return SmoothingResult("exact", math.exp(log_ev), log_ev, marginals)


@_deep_trees
def _sample_chunk(t, seed, start, stop, vectorize=True):
    prog, state, _ = _backward(t)
    plan = SamplingPlan(prog, state)
    latent = t.latent_ids
    if vectorize and PopulationPlan.supports(plan):
        log_w, traj = PopulationPlan(plan).run(t.root_value, seed, np.arange(start, stop))
        return log_w, {n: traj[n].tolist() for n in latent}
    log_w = np.empty(stop - start)
    points = {n: [] for n in latent}
    for j, i in enumerate(range(start, stop)):
        traj = {}
        out = plan.run(GuidedSample(0.0, t.root_value, replicate_stream(seed, i)), traj)
        log_w[j] = out.log_weight
        for n in latent:
            points[n].append(traj[n])
    return log_w, points


def _threads():
    raw = os.environ.get("BFFG_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"BFFG_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"BFFG_THREADS must be a positive integer, got {raw!r}")
    return n


@_deep_trees
def run_bffg_sampling(t, num_replicates, seed, workers=None, vectorize=True):
    """Weighted guided trajectories, one independent stream per replicate.

    Replicate ``i`` uses the stream seeded by ``(seed, i)``, so results do
    not depend on ``workers`` or ``vectorize``. Finite-state models are run
    on all replicates at once unless ``vectorize`` is false.
    """
    if num_replicates < 1:
        raise ValueError("num_replicates must be positive")
    workers = _threads() if workers is None else workers
    try:
        _, _, backward_log_ev = _backward(t)
        if workers <= 1 or num_replicates < 2 * workers:
            log_w, points = _sample_chunk(t, seed, 0, num_replicates, vectorize)
        else:
            bounds = np.linspace(0, num_replicates, workers + 1).astype(int)
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(
                    pool.map(_sample_chunk, [t] * workers, [seed] * workers, bounds[:-1], bounds[1:], [vectorize] * workers)
                )
            log_w = np.concatenate([p[0] for p in parts])
            points = {n: [x for p in parts for x in p[1][n]] for n in t.latent_ids}
    except NumericalError as exc:
        raise _with_context(exc, "forward sampling") from None

    finite = np.isfinite(log_w)
    if not finite.any():
        raise NumericalError("every replicate has zero weight")
    top = np.max(log_w[finite])
    w = np.exp(log_w - top)
    log_mean_w = top + math.log(w.mean())
    wn = w / w.sum()
    estimates = {}
    for n in t.latent_ids:
        space = t.node(n).space
        if is_discrete(space):
            idx = np.array([flat_index(space, x) for x in points[n]])
            estimates[n] = np.bincount(idx, weights=wn, minlength=size(space))
        elif is_continuous(space):
            vecs = np.array([flat_vector(space, x) for x in points[n]])
            estimates[n] = wn @ vecs
    log_ev = backward_log_ev + log_mean_w
    return SmoothingResult(
        "sampling",
        math.exp(log_ev),
        log_ev,
        log_weights=log_w,
        trajectories=points,
        estimates=estimates,
        seed=seed,
        backward_log_evidence=backward_log_ev,
    )

