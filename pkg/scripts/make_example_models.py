"""Write the example model files in models/ (fixed numbers, so the files are stable)."""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from bffg.instances import hmm_chain, lg_chain
from bffg.io import save_model
from bffg.kernels import DiscreteKernel, LinearGaussian
from bffg.spaces import Euclidean, Finite
from bffg.tree import Edge, Node, TreeModel


def two_leaf_tree():
    """r -> t1 -> t2 branching into t3 -> v1 and t4 -> v2; binary root, three-state interior."""
    two, three = Finite(2), Finite(3)
    spaces = {"r": two, "t1": three, "t2": three, "t3": three, "t4": two, "v1": two, "v2": two}
    roles = {"r": "root", "v1": "leaf", "v2": "leaf"}
    nodes = [Node(n, s, roles.get(n, "latent")) for n, s in spaces.items()]
    mats = {
        ("r", "t1"): [[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]],
        ("t1", "t2"): [[0.8, 0.1, 0.1], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]],
        ("t2", "t3"): [[0.6, 0.3, 0.1], [0.25, 0.5, 0.25], [0.1, 0.3, 0.6]],
        ("t2", "t4"): [[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]],
        ("t3", "v1"): [[0.95, 0.05], [0.5, 0.5], [0.05, 0.95]],
        ("t4", "v2"): [[0.8, 0.2], [0.3, 0.7]],
    }
    edges = [Edge(a, b, DiscreteKernel(np.array(m), spaces[a], spaces[b])) for (a, b), m in mats.items()]
    return TreeModel(nodes, edges, 0, {"v1": 1, "v2": 0})


def weather_hmm(degraded=False):
    """Three hidden regimes, three symbols, five steps."""
    P = np.array([[0.8, 0.15, 0.05], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]])
    E = np.array([[0.7, 0.2, 0.1], [0.2, 0.5, 0.3], [0.05, 0.25, 0.7]])
    backward = [np.full((3, 3), 1 / 3)] * 5 if degraded else None
    return hmm_chain([P] * 5, E, 0, [0, 0, 2, 1, 2], backward)


def tracking_chain():
    """Constant-velocity motion in 2D state (position, velocity), position observed."""
    E2, E1 = Euclidean(2), Euclidean(1)
    dt = 0.5
    k = LinearGaussian(np.array([[1.0, dt], [0.0, 1.0]]), np.zeros(2), np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]]) * 0.4, E2, E2)
    ok = LinearGaussian(np.array([[1.0, 0.0]]), np.zeros(1), np.array([[0.25]]), E2, E1)
    ys = [[0.4], [0.9], [1.7], [2.1], [2.9], [3.2]]
    return lg_chain([k] * 6, [ok] * 6, [0.0, 1.0], ys)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=Path(__file__).resolve().parent.parent / "models", type=Path)
    args = ap.parse_args()
    args.out.mkdir(exist_ok=True)
    for name, model in [
        ("two_leaf_tree", two_leaf_tree()),
        ("hmm", weather_hmm()),
        ("hmm_degraded", weather_hmm(degraded=True)),
        ("tracking", tracking_chain()),
    ]:
        path = args.out / f"{name}.json"
        save_model(model, path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
