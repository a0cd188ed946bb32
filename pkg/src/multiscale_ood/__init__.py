"""Multi-scale out-of-distribution detection over per-layer activations.

Fits a rectified one-class SVM on every early layer and a Gram-matrix
deviation detector on the last captured layer, picks the scoring layer by
true-negative rate on a tune OOD archive, and emits calibrated normality
scores plus ID/OOD decisions.
"""

from .archive import (
    Archive,
    ArchiveError,
    BadMagicError,
    Finding,
    LayerDescriptor,
    LayerTensor,
    Manifest,
    SampleRecord,
    TruncatedBlobError,
    UnsupportedVersionError,
    open_archive,
    read_layer_tensors,
    read_manifest,
    validate_archive,
    write_archive,
)
from .gram import GramStats, deviation, fit_gram_stats, gram_row_sums, total_deviation
from .metrics import ScoreSet, auroc, detection_accuracy, tnr_at_tpr
from .ocsvm import (
    OcsvmConfig,
    OcsvmModel,
    decision,
    decision_values,
    default_gamma,
    fit_ocsvm,
    rbf_kernel,
)
from .ops import ChannelVector, rectify, reduce_spatial
from .pipeline import (
    DetectorBundle,
    LayerDetectorReport,
    PipelineConfig,
    ScoredSample,
    calibrate_threshold,
    decide,
    fit_bundle,
    layer_tnr,
    load_bundle,
    normality_score,
    save_bundle,
    score_archive,
    select_layer,
    write_scores_csv,
)
from .synth import SplitMix64, SynthConfig, generate_archive, prng_next

__version__ = "0.1.0"

__all__ = [
    "Archive",
    "ArchiveError",
    "BadMagicError",
    "ChannelVector",
    "DetectorBundle",
    "Finding",
    "GramStats",
    "LayerDescriptor",
    "LayerDetectorReport",
    "LayerTensor",
    "Manifest",
    "OcsvmConfig",
    "OcsvmModel",
    "PipelineConfig",
    "SampleRecord",
    "ScoreSet",
    "ScoredSample",
    "SplitMix64",
    "SynthConfig",
    "TruncatedBlobError",
    "UnsupportedVersionError",
    "auroc",
    "calibrate_threshold",
    "decide",
    "decision",
    "decision_values",
    "default_gamma",
    "detection_accuracy",
    "deviation",
    "fit_bundle",
    "fit_gram_stats",
    "fit_ocsvm",
    "generate_archive",
    "gram_row_sums",
    "layer_tnr",
    "load_bundle",
    "normality_score",
    "open_archive",
    "prng_next",
    "rbf_kernel",
    "read_layer_tensors",
    "read_manifest",
    "rectify",
    "reduce_spatial",
    "save_bundle",
    "score_archive",
    "select_layer",
    "tnr_at_tpr",
    "total_deviation",
    "validate_archive",
    "write_archive",
    "write_scores_csv",
]
