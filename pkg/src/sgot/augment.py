"""Weak, content-preserving augmentation of scene graphs.

Objects, relations and the edges between them always survive. Each
attribute node is dropped independently (with its edges), and the surviving
embedding rows are jittered with Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sgot.graph import ATTRIBUTE, Node, SceneGraph


@dataclass(frozen=True)
class PerturbConfig:
    k: int = 2
    noise: float = 0.01
    p_drop: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not (math.isfinite(self.noise) and self.noise >= 0):
            raise ValueError(f"noise must be finite and >= 0, got {self.noise}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError(f"p_drop must lie in [0, 1], got {self.p_drop}")


def perturb(g: SceneGraph, X: np.ndarray, cfg: PerturbConfig = PerturbConfig()) -> list[tuple[SceneGraph, np.ndarray]]:
    """Return ``cfg.k`` augmented ``(graph, embedding)`` variants.

    Variant nodes carry their perturbed rows as explicit embeddings, so a
    variant written to disk reloads with the same features. Variant ``i``
    draws from its own child stream of ``cfg.seed``; its attribute drops
    do not depend on the noise scale.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(g):
        raise ValueError(f"embedding shape {X.shape} does not match a graph of {len(g)} nodes")
    attrs = np.array([n.kind is ATTRIBUTE for n in g.nodes])
    variants = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.k):
        rng = np.random.default_rng(child)
        drop = attrs & (rng.random(len(g)) < cfg.p_drop)
        keep = np.flatnonzero(~drop)
        noise = rng.standard_normal((len(keep), X.shape[1]))
        rows = X[keep] + cfg.noise * noise
        kept_ids = {g.nodes[i].id for i in keep}
        nodes = tuple(
            Node(g.nodes[i].id, g.nodes[i].kind, g.nodes[i].label, tuple(float(v) for v in row))
            for i, row in zip(keep, rows)
        )
        edges = tuple(e for e in g.edges if e[0] in kept_ids and e[1] in kept_ids)
        variants.append((SceneGraph(nodes, edges), rows))
    return variants
