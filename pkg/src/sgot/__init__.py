"""Wasserstein distances between heterogeneous scene graphs and the
semi-supervised consistency losses built from them."""

from sgot.graph import (
    CorpusManifest,
    GraphParseError,
    GraphValidationError,
    Node,
    NodeKind,
    SceneGraph,
    dump_graph,
    load_graph,
    load_manifest,
    typed_neighbors,
    validate_graph,
)
from sgot.embedding import (
    PropagationConfig,
    featurize,
    propagate_nonparametric,
    propagate_parametric,
    random_weights,
)
from sgot.transport import (
    NumericError,
    SinkhornConfig,
    TransportPlan,
    cost_matrix,
    exact_ot,
    gwd,
    gwd_gradient,
    sinkhorn,
)
from sgot.consistency import (
    LossReport,
    LossWeights,
    inter_loss,
    intra_loss,
    intra_loss_plus,
    total_loss,
)
from sgot.augment import PerturbConfig, perturb

__version__ = "0.1.0"
