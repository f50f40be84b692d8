"""Node embeddings for scene graphs.

Two propagation schemes share the typed neighbor rule from
:func:`sgot.graph.typed_neighbors`:

* parametric: ``h' = relu(sum_k W[kind(k)] h_k + h)``
* non-parametric: ``h' = sum_k alpha_k h_k + h`` with ``alpha_k`` the
  neighbor's squared distance to ``h`` normalised over all neighbors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from sgot.graph import NodeKind, SceneGraph, neighbor_indices

MODES = ("nonparametric", "parametric")
WEIGHTINGS = ("distance", "inverse")
DEFAULT_LAYERS = 2


def _label_vector(label: str, kind: NodeKind, seed: int, d: int) -> np.ndarray:
    key = f"{seed}\x1f{kind.value}\x1f{label}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-1.0, 1.0, size=d)


def featurize(g: SceneGraph, d: int, seed: int = 0) -> np.ndarray:
    """Initial ``(len(g), d)`` features.

    Nodes with an explicit embedding use it as is; the rest get a vector in
    [-1, 1]^d derived from a hash of ``(label, kind, seed)``, so equal
    triples always map to equal rows, across processes too.
    """
    if d < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {d}")
    X = np.empty((len(g), d))
    for i, node in enumerate(g.nodes):
        if node.embedding is not None:
            if len(node.embedding) != d:
                raise ValueError(
                    f"node {node.id!r}: explicit embedding has dimension {len(node.embedding)}, expected {d}"
                )
            X[i] = node.embedding
        else:
            X[i] = _label_vector(node.label, node.kind, seed, d)
    return X


def _check_rows(g: SceneGraph, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(g):
        raise ValueError(f"embedding shape {X.shape} does not match a graph of {len(g)} nodes")
    if not np.all(np.isfinite(X)):
        raise ValueError("embedding contains non-finite entries")
    return X


def aggregation_weights(h: np.ndarray, neighbors: np.ndarray, weighting: str = "distance") -> np.ndarray:
    """Weights for combining ``neighbors`` (rows) around ``h``.

    ``distance`` weights are proportional to squared distance; ``inverse``
    to its reciprocal. When the rule is undefined (all distances zero, or a
    zero distance under ``inverse``) the mass is split evenly over the
    neighbors that attain the limit.
    """
    dist = ((neighbors - h) ** 2).sum(axis=1)
    if weighting == "distance":
        total = dist.sum()
        if total > 0:
            return dist / total
        return np.full(len(dist), 1.0 / len(dist))
    if weighting == "inverse":
        zero = dist == 0
        if zero.any():
            return zero / zero.sum()
        inv = 1.0 / dist
        return inv / inv.sum()
    raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")


def propagate_nonparametric(
    g: SceneGraph,
    X0: np.ndarray,
    layers: int = DEFAULT_LAYERS,
    weighting: str = "distance",
) -> np.ndarray:
    X = _check_rows(g, X0).copy()
    if layers < 0:
        raise ValueError(f"layers must be >= 0, got {layers}")
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")
    nbrs = [np.asarray(ix, dtype=int) for ix in neighbor_indices(g)]
    for _ in range(layers):
        nxt = X.copy()
        for m, ix in enumerate(nbrs):
            if len(ix) == 0:
                continue
            alpha = aggregation_weights(X[m], X[ix], weighting)
            nxt[m] = alpha @ X[ix] + X[m]
        X = nxt
    return X


@dataclass(frozen=True)
class PropagationConfig:
    """Propagation settings.

    ``weights[l][kind]`` is the ``d x d`` matrix applied to a neighbor of
    that kind at layer ``l``; only used in parametric mode.
    """

    layers: int = DEFAULT_LAYERS
    mode: str = "nonparametric"
    weights: Optional[Sequence[Mapping[NodeKind, np.ndarray]]] = None
    weighting: str = "distance"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.layers < 0 or (self.mode == "parametric" and self.layers < 1):
            raise ValueError(f"invalid layer count {self.layers}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}")

    def check_weights(self, d: int) -> None:
        if self.weights is None:
            raise ValueError("parametric mode needs weight matrices")
        if len(self.weights) != self.layers:
            raise ValueError(f"expected weights for {self.layers} layers, got {len(self.weights)}")
        for l, per_kind in enumerate(self.weights):
            for kind in NodeKind:
                if kind not in per_kind:
                    raise ValueError(f"layer {l}: missing weight matrix for {kind.value} neighbors")
                W = np.asarray(per_kind[kind])
                if W.shape != (d, d):
                    raise ValueError(f"layer {l}, {kind.value}: weight shape {W.shape}, expected {(d, d)}")
                if not np.all(np.isfinite(W)):
                    raise ValueError(f"layer {l}, {kind.value}: non-finite weights")


def random_weights(d: int, layers: int = DEFAULT_LAYERS, seed: int = 0, scale: float = 0.1) -> list[dict]:
    """Seeded uniform ``[-scale, scale]`` weights, one matrix per layer and kind."""
    rng = np.random.default_rng(seed)
    return [{kind: rng.uniform(-scale, scale, size=(d, d)) for kind in NodeKind} for _ in range(layers)]


def propagate_parametric(g: SceneGraph, X0: np.ndarray, cfg: PropagationConfig) -> np.ndarray:
    X = _check_rows(g, X0).copy()
    cfg.check_weights(X.shape[1])
    nbrs = neighbor_indices(g)
    kinds = g.kinds()
    for per_kind in cfg.weights:
        W = {k: np.asarray(v, dtype=float) for k, v in per_kind.items()}
        # message from k is W[kind(k)] @ h_k, precomputed once per kind
        msgs = {k: X @ W[k].T for k in NodeKind}
        nxt = X.copy()
        for m, ix in enumerate(nbrs):
            acc = X[m].copy()
            for k in ix:
                acc += msgs[kinds[k]][k]
            nxt[m] = np.maximum(acc, 0.0)
        X = nxt
    return X


def embed(g: SceneGraph, d: int, cfg: PropagationConfig = PropagationConfig(), seed: int = 0) -> np.ndarray:
    """Featurize then propagate according to ``cfg``."""
    X0 = featurize(g, d, seed)
    if cfg.mode == "parametric":
        return propagate_parametric(g, X0, cfg)
    return propagate_nonparametric(g, X0, cfg.layers, cfg.weighting)
