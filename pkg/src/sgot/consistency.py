"""Inter-modal and intra-modal consistency losses and their assembly.

``total = L_c + lam1 * inter + lam2 * intra``. Intra-modal terms count each
unordered pair of views once; summing over ordered pairs would only double
the term, which ``lam2`` absorbs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from sgot.graph import CorpusManifest, SceneGraph
from sgot.transport import SinkhornConfig, gwd

ABLATIONS = ("none", "inter-only", "intra-only")


@dataclass(frozen=True)
class LossWeights:
    lam1: float = 1.0
    lam2: float = 1.0

    def __post_init__(self):
        for name in ("lam1", "lam2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    def ablate(self, ablation: str) -> "LossWeights":
        """``inter-only`` drops the intra term, ``intra-only`` the inter term."""
        if ablation == "none":
            return self
        if ablation == "inter-only":
            return LossWeights(self.lam1, 0.0)
        if ablation == "intra-only":
            return LossWeights(0.0, self.lam2)
        raise ValueError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")


@dataclass(frozen=True)
class ExampleLoss:
    id: str
    inter: float
    intra: float


@dataclass(frozen=True)
class LossReport:
    L_c: float
    inter: float
    intra: float
    total: float
    weights: LossWeights = LossWeights()
    breakdown: tuple[ExampleLoss, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "L_c": self.L_c,
            "lam1": self.weights.lam1,
            "lam2": self.weights.lam2,
            "inter": self.inter,
            "intra": self.intra,
            "total": self.total,
            "examples": [{"id": e.id, "inter": e.inter, "intra": e.intra} for e in self.breakdown],
        }


def _distance(pair, cfg):
    return gwd(pair[0], pair[1], cfg)[0]


def pair_distances(pairs: Sequence, cfg: SinkhornConfig = SinkhornConfig(), jobs: int = 1) -> list[float]:
    """GWD for each ``(X, Y)`` pair, in input order."""
    if jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda p: _distance(p, cfg), pairs))
    return [_distance(p, cfg) for p in pairs]


def inter_loss(pairs: Sequence, cfg: SinkhornConfig = SinkhornConfig()) -> float:
    """Sum of GWD over ``(image embedding, sentence embedding)`` pairs."""
    return math.fsum(pair_distances(pairs, cfg))


def _bag_pairs(bag: Sequence) -> list:
    return [(bag[i], bag[j]) for i, j in combinations(range(len(bag)), 2)]


def intra_loss(bags: Sequence[Sequence], cfg: SinkhornConfig = SinkhornConfig()) -> float:
    """Sum over bags of GWD between every unordered pair of sentence views."""
    total = []
    for bag in bags:
        if len(bag) < 1:
            raise ValueError("each bag needs at least one graph")
        total.extend(pair_distances(_bag_pairs(bag), cfg))
    return math.fsum(total)


def intra_loss_plus(
    image_bags: Sequence[Sequence],
    sentence_bags: Sequence[Sequence],
    cfg: SinkhornConfig = SinkhornConfig(),
) -> float:
    """Intra-modal loss over both the augmented image views and the sentences."""
    if len(image_bags) != len(sentence_bags):
        raise ValueError(f"{len(image_bags)} image bags vs {len(sentence_bags)} sentence bags")
    for j, (ib, sb) in enumerate(zip(image_bags, sentence_bags)):
        if len(ib) != len(sb):
            raise ValueError(f"bag {j}: {len(ib)} images vs {len(sb)} sentences")
    return intra_loss(image_bags, cfg) + intra_loss(sentence_bags, cfg)


def total_loss(
    L_c: float,
    inter: float,
    intra: float,
    w: LossWeights = LossWeights(),
    breakdown: Sequence[ExampleLoss] = (),
) -> LossReport:
    for name, value in (("L_c", L_c), ("inter", inter), ("intra", intra)):
        if not math.isfinite(value):
            raise ValueError(f"{name} is not finite: {value}")
    total = L_c + w.lam1 * inter + w.lam2 * intra
    return LossReport(float(L_c), float(inter), float(intra), float(total), w, tuple(breakdown))


def evaluate_corpus(
    corpus: CorpusManifest,
    embed: Callable[[SceneGraph], np.ndarray],
    cfg: SinkhornConfig = SinkhornConfig(),
    weights: LossWeights = LossWeights(),
    L_c: float = 0.0,
    plus: bool = False,
    all_views: bool = False,
    ablation: str = "none",
    jobs: int = 1,
) -> LossReport:
    """Loss over every undescribed bag of a corpus.

    ``embed`` maps a graph to its node embeddings. Inter-modal terms use the
    raw image and its sentence only, unless ``all_views`` also pairs each
    augmented image with its own sentence. ``plus`` adds image-side pairs to
    the intra-modal term. Described pairs contribute only through ``L_c``.
    """
    w = weights.ablate(ablation)
    rows = []
    for bag in corpus.undescribed:
        images = [embed(g) for g in bag.images]
        sentences = [embed(g) for g in bag.sentences]
        views = range(len(images)) if all_views else range(1)
        inter = math.fsum(pair_distances([(images[i], sentences[i]) for i in views], cfg, jobs))
        pairs = _bag_pairs(sentences)
        if plus:
            pairs = _bag_pairs(images) + pairs
        intra = math.fsum(pair_distances(pairs, cfg, jobs))
        rows.append(ExampleLoss(bag.id, inter, intra))
    inter_total = math.fsum(r.inter for r in rows)
    intra_total = math.fsum(r.intra for r in rows)
    return total_loss(L_c, inter_total, intra_total, w, rows)
