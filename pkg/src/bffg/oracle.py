"""Brute-force reference computations used to check the smoothing code.

Nothing here calls the pullback, forward-map or guiding code; only kernel
parameters and point indexing are shared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import NumericalError
from .kernels import DiscreteKernel
from .spaces import flat_index, flat_vector, size

MAX_PATHS = 10**7


@dataclass
class EnumeratedPosterior:
    nodes: tuple
    joint: np.ndarray  # posterior probabilities, one axis per latent node
    evidence: float

    @property
    def marginals(self):
        out = {}
        for axis, n in enumerate(self.nodes):
            others = tuple(i for i in range(len(self.nodes)) if i != axis)
            out[n] = self.joint.sum(axis=others)
        return out

    def probability(self, assignment):
        """Posterior probability of a full assignment {node: flat state index}."""
        return float(self.joint[tuple(assignment[n] for n in self.nodes)])


def brute_force_smoother(t):
    """Enumerate every latent assignment of a finite-state tree."""
    latent = t.latent_ids
    sizes = [size(t.node(n).space) for n in latent]
    if math.prod(sizes) > MAX_PATHS:
        raise ValueError(f"{math.prod(sizes)} latent paths exceed the enumeration cap of {MAX_PATHS}")
    axis = {n: i for i, n in enumerate(latent)}
    joint = np.ones(sizes)
    const = 1.0
    root_idx = flat_index(t.node(t.root).space, t.root_value)

    def along(factor_by_axis):
        shape = [1] * len(latent)
        for ax, n in factor_by_axis:
            shape[ax] = n
        return shape

    for e in t.edges:
        if not isinstance(e.kernel, DiscreteKernel):
            raise TypeError("brute-force enumeration needs discrete kernels")
        P = e.kernel.matrix
        child_role = t.node(e.child).role
        if child_role == "leaf":
            col = P[:, flat_index(t.node(e.child).space, t.observations[e.child])]
            if e.parent == t.root:
                const *= col[root_idx]
            else:
                a = axis[e.parent]
                joint = joint * col.reshape(along([(a, sizes[a])]))
        elif e.parent == t.root:
            c = axis[e.child]
            joint = joint * P[root_idx].reshape(along([(c, sizes[c])]))
        else:
            a, c = axis[e.parent], axis[e.child]
            M = P if a < c else P.T
            joint = joint * M.reshape(along([(a, sizes[a]), (c, sizes[c])]))
    total = float(joint.sum()) * const
    if not total > 0:
        raise NumericalError("observations have zero probability under the model")
    return EnumeratedPosterior(tuple(latent), joint / joint.sum(), total)


def rts_smoother(chain, observations, root_value):
    """Kalman filter and Rauch-Tung-Striebel smoother for a Gaussian chain.

    ``chain[i]`` is the linear-Gaussian transition into node i+1 (node 0 is
    the known root); ``observations[i]`` is ``None`` or an (observation
    kernel, value) pair for node i+1. Returns smoothed (mean, cov) per node.
    """
    m = np.asarray(root_value, dtype=float)
    P = np.zeros((m.size, m.size))
    pred, filt = [], []
    for k, obs in zip(chain, observations):
        m = k.B @ m + k.beta
        P = k.B @ P @ k.B.T + k.Q
        pred.append((m, P))
        if obs is not None:
            ok, v = obs
            H, b, R = ok.B, ok.beta, ok.Q
            S = H @ P @ H.T + R
            try:
                np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise NumericalError("innovation covariance is not positive definite") from None
            G = np.linalg.solve(S, H @ P).T
            m = m + G @ (np.asarray(v, dtype=float) - H @ m - b)
            IGH = np.eye(m.size) - G @ H
            P = IGH @ P @ IGH.T + G @ R @ G.T
        filt.append((m, P))

    smoothed = [filt[-1]]
    for i in range(len(chain) - 2, -1, -1):
        mf, Pf = filt[i]
        mp, Pp = pred[i + 1]
        ms, Ps = smoothed[0]
        J = np.linalg.solve(Pp, chain[i + 1].B @ Pf).T
        smoothed.insert(0, (mf + J @ (ms - mp), Pf + J @ (Ps - Pp) @ J.T))
    return [(mean, (cov + cov.T) / 2) for mean, cov in smoothed]


def quadrature_pullback_1d(k, h, x):
    """∫ h(y) N(y; B x + beta, Q) dy by adaptive quadrature on mean ± 12 sd."""
    a = float(k.B[0, 0] * float(np.atleast_1d(x)[0]) + k.beta[0])
    q = float(k.Q[0, 0])
    sd = math.sqrt(q)
    logc = getattr(h, "logc", 0.0)
    F = float(h.F[0]) if hasattr(h, "F") else 0.0
    H = float(h.H[0, 0]) if hasattr(h, "H") else 0.0

    def integrand(y):
        return math.exp(logc + F * y - 0.5 * H * y * y - 0.5 * (y - a) ** 2 / q) / math.sqrt(2 * math.pi * q)

    val, _ = integrate.quad(integrand, a - 12 * sd, a + 12 * sd, points=[a], epsabs=1e-10, epsrel=1e-12, limit=500)
    return val


def gaussian_density(k, x, y):
    """Transition density of a linear-Gaussian kernel at (x, y), from the textbook formula."""
    r = flat_vector(k.target, y) - (k.B @ flat_vector(k.source, x) + k.beta)
    d = r.size
    sign, logdet = np.linalg.slogdet(k.Q)
    return math.exp(-0.5 * r @ np.linalg.solve(k.Q, r) - 0.5 * (d * math.log(2 * math.pi) + logdet))
