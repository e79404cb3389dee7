"""Forward sampling of weighted triples (weight, point, stream) through optic programs.

Each primitive optic maps (w, x, z) to (w * w(m, delta_x), x', z'') where
x' is drawn from the guided kernel with the first split child of z and z''
is the second child. Duplication keeps the weight, copies the point and
hands each branch its own child stream. Weights are carried on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, UnsupportedPairingError, ZeroDenominatorError
from .kernels import (
    DiscreteKernel,
    DuplicationKernel,
    IdentityKernel,
    LinearGaussian,
    sample_discrete_row,
    sample_kernel,
)
from .optics import (
    Par,
    Prim,
    Seq,
    _guided_discrete_matrix,
    _log_ratio_terms,
    _ones_or_values,
    guided_kernel,
    label_context,
    log_weight_at,
)
from .rng import child_keys, first_stream, first_uniforms, replicate_keys
from .spaces import Finite, flat_index, flat_vector, log_evaluate, unflatten_index, unflatten_vector

WEIGHT_CEILING = 1e300
WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class GuidedSample:
    """The triple (weight, point, stream); the weight is stored as its log."""

    log_weight: float
    point: object
    stream: object

    @classmethod
    def start(cls, point, stream, weight=1.0):
        if not (weight >= 0 and math.isfinite(weight)):
            raise ValueError("weight must be finite and nonnegative")
        return cls(math.log(weight) if weight > 0 else -math.inf, point, stream)

    @property
    def weight(self):
        return math.exp(self.log_weight)


class _Step:
    """A primitive optic with its message, prepared for repeated sampling."""

    def __init__(self, optic, message, label=None):
        self.label = label
        self.optic = optic
        self.message = message
        k = optic.forward
        if isinstance(k, IdentityKernel):
            self.kind = "identity"
        elif isinstance(k, DuplicationKernel):
            self.kind = "duplicate"
        elif isinstance(k, DiscreteKernel):
            self.kind = "discrete"
            g = _ones_or_values(message.numerator, k.target)
            G, norm = _guided_discrete_matrix(k.matrix, g)
            den = _ones_or_values(message.denominator, k.source)
            with np.errstate(divide="ignore", invalid="ignore"):
                lw = np.log(norm) - np.log(den)
            if optic.exact:
                lw = np.where(den > 0, 0.0, -np.inf)
            self.log_weights = lw.tolist()
            self.denominator = den.tolist()
            self.cumulative = [np.cumsum(row).tolist() for row in G]
            self.source, self.target = k.source, k.target
        elif isinstance(k, LinearGaussian):
            self.kind = "gaussian"
            self.guided = guided_kernel(optic, message)
            self.source, self.target = k.source, k.target
            if not optic.exact:
                self.ratio = _log_ratio_terms(optic, message)
        else:
            self.kind = "generic"

    def log_weight(self, x):
        if self.kind == "discrete":
            i = flat_index(self.source, x)
            if self.denominator[i] <= 0:
                raise ZeroDenominatorError(f"message denominator vanishes at {x!r}")
            return self.log_weights[i]
        if self.kind == "gaussian":
            if log_evaluate(self.message.denominator, x) == -math.inf:
                raise ZeroDenominatorError(f"message denominator vanishes at {x!r}")
            if self.optic.exact:
                return 0.0
            logc, F, H = self.ratio
            v = flat_vector(self.source, x)
            return logc + F @ v - 0.5 * v @ H @ v
        return log_weight_at(self.optic, self.message, x)

    def draw(self, x, z):
        if self.kind == "discrete":
            i = flat_index(self.source, x)
            row = self.cumulative[i]
            if row[-1] <= 0:
                raise NumericalError(f"guided kernel undefined: observations impossible from source point {x!r}")
            return unflatten_index(self.target, sample_discrete_row(row, z.next_uniform()))
        if self.kind == "gaussian":
            y = self.guided.mean(x) + self.guided._chol @ np.asarray(z.normals(self.guided.beta.size))
            return unflatten_vector(self.target, y)
        return sample_kernel(guided_kernel(self.optic, self.message), x, z)

    def apply(self, xi):
        if self.kind == "duplicate":
            return forward_sampling_duplicate(xi)
        here, rest = first_stream(xi.stream).split()
        lw = xi.log_weight + self.log_weight(xi.point)
        if self.kind == "identity":
            return GuidedSample(lw, xi.point, rest)
        return GuidedSample(lw, self.draw(xi.point, here), rest)


def forward_sampling_map(o, m, xi):
    """Push one weighted sample through a single optic."""
    return _Step(o, m).apply(xi)


def forward_sampling_duplicate(xi):
    """Duplication: weight unchanged, point copied, stream split between the branches."""
    return GuidedSample(xi.log_weight, (xi.point, xi.point), first_stream(xi.stream).split())


@dataclass
class SamplingOutcome:
    sample: GuidedSample
    trajectory: dict = field(default_factory=dict)

    @property
    def log_weight(self):
        return self.sample.log_weight

    @property
    def weight(self):
        return self.sample.weight


class SamplingPlan:
    """A program and its backward-pass state, prepared once for many replicates."""

    def __init__(self, program, state):
        self.root = self._build(program, state)

    def _build(self, p, s):
        if isinstance(p, Prim):
            return _Step(p.optic, s.message, p.label)
        if isinstance(p, Seq):
            return ("seq", [self._build(c, st) for c, st in zip(p.children, s.children)])
        if isinstance(p, Par):
            return ("par", [self._build(c, st) for c, st in zip(p.children, s.children)])
        raise TypeError(f"not a program node: {p!r}")

    def run(self, xi, trajectory=None):
        out = self._run(self.root, xi, trajectory)
        return SamplingOutcome(out, trajectory if trajectory is not None else {})

    def _run(self, node, xi, trajectory):
        if isinstance(node, _Step):
            try:
                xi = node.apply(xi)
            except NumericalError as exc:
                raise label_context(exc, node.label)
            if trajectory is not None and node.label is not None:
                trajectory[node.label] = xi.point
            return xi
        kind, children = node
        if kind == "seq":
            for c in children:
                xi = self._run(c, xi, trajectory)
            return xi
        n = len(children)
        if not isinstance(xi.point, tuple) or len(xi.point) != n:
            raise UnsupportedPairingError(f"parallel node needs a {n}-tuple point, got {xi.point!r}")
        z = xi.stream
        streams = z if isinstance(z, tuple) and len(z) == n else [first_stream(z).child(i) for i in range(n)]
        outs = [
            self._run(c, GuidedSample(xi.log_weight if i == 0 else 0.0, x, zi), trajectory)
            for i, (c, x, zi) in enumerate(zip(children, xi.point, streams))
        ]
        return GuidedSample(
            sum(o.log_weight for o in outs),
            tuple(o.point for o in outs),
            tuple(o.stream for o in outs),
        )


def _first(z):
    while isinstance(z, tuple):
        z = z[0]
    return z


class PopulationPlan:
    """A sampling plan run on many replicates at once with array arithmetic.

    Only finite state spaces with discrete, identity and duplication steps
    are supported (see ``supports``). Each replicate's stream keys, uniforms
    and inverse-CDF draws are computed exactly as ``SamplingPlan`` computes
    them one replicate at a time, so both give bit-identical results.
    """

    def __init__(self, plan):
        if not self.supports(plan):
            raise UnsupportedPairingError("population sampling needs finite spaces and discrete kernels")
        self.root = self._build(plan.root)

    @staticmethod
    def supports(plan):
        def ok(node):
            if isinstance(node, _Step):
                if node.kind == "duplicate":
                    return isinstance(node.optic.source, Finite)
                if node.kind == "identity":
                    return isinstance(node.optic.source, Finite)
                return node.kind == "discrete" and isinstance(node.source, Finite) and isinstance(node.target, Finite)
            return all(ok(c) for c in node[1])

        return ok(plan.root)

    def _build(self, node):
        if isinstance(node, _Step):
            arrays = {}
            if node.kind == "identity":
                arrays["denominator"] = _ones_or_values(node.message.denominator, node.optic.source)
            elif node.kind == "discrete":
                arrays["denominator"] = np.asarray(node.denominator)
                arrays["log_weights"] = np.asarray(node.log_weights)
                arrays["cumulative"] = np.asarray(node.cumulative)
            return (node, arrays)
        kind, children = node
        return (kind, [self._build(c) for c in children])

    def run(self, root_point, seed, indices, record=True):
        """(log weights, trajectory) for replicates ``indices`` started at ``root_point``."""
        indices = np.asarray(indices)
        n = indices.size
        x = np.full(n, int(root_point), dtype=np.int64)
        traj = {} if record else None
        lw, _, _ = self._run(self.root, np.zeros(n), x, replicate_keys(seed, indices), traj)
        return lw, traj

    @staticmethod
    def _check_denominator(den, x):
        bad = np.flatnonzero(den[x] <= 0)
        if bad.size:
            raise ZeroDenominatorError(f"message denominator vanishes at {int(x[bad[0]])!r}")

    def _run(self, node, lw, x, z, traj):
        head, body = node
        if isinstance(head, _Step):
            step, arrays = head, body
            keys = _first(z)
            if step.kind == "duplicate":
                return lw, (x, x), (child_keys(keys, 0), child_keys(keys, 1))
            here, rest = child_keys(keys, 0), child_keys(keys, 1)
            try:
                self._check_denominator(arrays["denominator"], x)
                if step.kind == "discrete":
                    lw = lw + arrays["log_weights"][x]
                    x = self._draw(arrays["cumulative"], x, first_uniforms(here))
            except NumericalError as exc:
                raise label_context(exc, step.label)
            if traj is not None and step.label is not None:
                traj[step.label] = x
            return lw, x, rest
        if head == "seq":
            for c in body:
                lw, x, z = self._run(c, lw, x, z, traj)
            return lw, x, z
        k = len(body)
        if not isinstance(x, tuple) or len(x) != k:
            raise UnsupportedPairingError(f"parallel node needs a {k}-tuple point")
        streams = z if isinstance(z, tuple) and len(z) == k else tuple(child_keys(_first(z), i) for i in range(k))
        outs = [
            self._run(c, lw if i == 0 else np.zeros_like(lw), xi, zi, traj)
            for i, (c, xi, zi) in enumerate(zip(body, x, streams))
        ]
        total = outs[0][0]
        for o in outs[1:]:
            total = total + o[0]
        return total, tuple(o[1] for o in outs), tuple(o[2] for o in outs)

    @staticmethod
    def _draw(cumulative, x, u):
        rows = cumulative[x]
        totals = rows[:, -1]
        empty = np.flatnonzero(totals <= 0)
        if empty.size:
            raise NumericalError(
                f"guided kernel undefined: observations impossible from source point {int(x[empty[0]])!r}"
            )
        m = rows.shape[1]
        idx = np.minimum(np.sum(rows <= (u * totals)[:, None], axis=1), m - 1)
        # same step-back over empty states as sample_discrete_row
        r = np.arange(idx.size)
        while True:
            back = (idx > 0) & (rows[r, idx] == rows[r, np.maximum(idx - 1, 0)])
            if not back.any():
                return idx
            idx = idx - back


def run_forward_sampling(p, s, xi, record=True):
    """Push ``xi`` through program ``p``; the trajectory maps labels to sampled points."""
    return SamplingPlan(p, s).run(xi, {} if record else None)


def weights_in_range(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    return bool(np.all((lw <= math.log(WEIGHT_CEILING)) & (lw >= math.log(WEIGHT_FLOOR))))


def effective_sample_size(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        return 0.0
    w = np.exp(lw - np.max(lw))
    return float(w.sum() ** 2 / (w @ w))
