"""affseg: segmentation toolkit for anisotropic affinity volumes.

Builds 3-d segmentations from voxel-pair affinity graphs: maximin pair
counting and loss gradients, z-watershed over-segmentation, hierarchical
supervoxel agglomeration with a replayable merge tree, split variation
of information scoring, and halo-overlap stitching of block results.
"""

from affseg.volume import (
    AffinityVolume,
    BadMagic,
    LabelVolume,
    Shape3,
    ShapeMismatch,
    TruncatedPayload,
    UnknownDtype,
    VolumeError,
    read_volume,
    write_volume,
)
from affseg.malis import (
    MalisResult,
    OutOfBounds,
    PairCounts,
    malis_edge_counts,
    malis_gradient,
    maximin_affinity,
)
from affseg.zwatershed import BasinStats, WatershedParams, size_filter, zwatershed
from affseg.agglo import (
    DegenerateTraining,
    FeatureAccumulator,
    Logistic,
    MeanAffinity,
    MergeTree,
    MissingEdge,
    Rag,
    TreeBaseMismatch,
    agglomerate,
    apply_threshold,
    build_rag,
    edge_features,
    train_scorer,
)
from affseg.metrics import EmptyOverlap, ViScore, split_vi, vi_curve
from affseg.stitch import (
    BlockSpec,
    CoverageGap,
    InvalidPartition,
    StitchGraph,
    build_stitch_graph,
    partition_blocks,
    stitch,
)
from affseg.synthdata import (
    NoiseParams,
    SynthParams,
    TooManySeeds,
    affinities_from_labels,
    labels_from_seeds,
    synth_affinities,
    synth_labels,
)

__version__ = "0.1.0"

__all__ = [
    "AffinityVolume",
    "BadMagic",
    "BasinStats",
    "BlockSpec",
    "CoverageGap",
    "DegenerateTraining",
    "EmptyOverlap",
    "FeatureAccumulator",
    "InvalidPartition",
    "LabelVolume",
    "Logistic",
    "MalisResult",
    "MeanAffinity",
    "MergeTree",
    "MissingEdge",
    "NoiseParams",
    "OutOfBounds",
    "PairCounts",
    "Rag",
    "Shape3",
    "ShapeMismatch",
    "StitchGraph",
    "SynthParams",
    "TooManySeeds",
    "TreeBaseMismatch",
    "TruncatedPayload",
    "UnknownDtype",
    "ViScore",
    "VolumeError",
    "WatershedParams",
    "agglomerate",
    "affinities_from_labels",
    "apply_threshold",
    "build_rag",
    "build_stitch_graph",
    "edge_features",
    "labels_from_seeds",
    "malis_edge_counts",
    "malis_gradient",
    "maximin_affinity",
    "partition_blocks",
    "read_volume",
    "size_filter",
    "split_vi",
    "stitch",
    "synth_affinities",
    "synth_labels",
    "train_scorer",
    "vi_curve",
    "write_volume",
    "zwatershed",
]
