"""Recursive decomposition matching between finite metric spaces."""

from .clustering import ClusterAssignment, kmeans_partition, voronoi_partition
from .datagen import (
    DatagenError,
    SynthSpec,
    gen_gaussian_mixture,
    gen_separated_clusters,
    split_halves,
)
from .evaluation import (
    EvalReport,
    correspondence_auc,
    evaluate,
    label_accuracy,
    matching_distortion,
)
from .metric import (
    LabeledDataset,
    MetricError,
    MetricSpace,
    build_euclidean_space,
    build_explicit_space,
    build_geodesic_space,
    diameter,
    restrict,
)
from .recursion import MrecParams, RecursionTrace, mrec_match
from .search import SweepGrid, curve_export, sweep
from .transport import (
    Coupling,
    Matching,
    brute_force_gh,
    entropic_gw,
    fused_match,
    round_to_matching,
    sinkhorn,
)

__version__ = "0.1.0"
