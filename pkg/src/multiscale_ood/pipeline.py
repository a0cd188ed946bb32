"""Multi-scale detection pipeline.

Every layer except the last gets a one-class SVM over rectified,
spatially reduced features; the last declared layer gets the Gram
deviation detector.  Per-layer thresholds are calibrated so a target
fraction of ID validation scores lands on the ID side, the scoring layer
is the one with the highest true-negative rate on a tune OOD archive,
and a sample's normality is its empirical rank within the stored ID
validation scores (1.0 = more ID-like than all of them).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping

import numpy as np

from .archive import Archive, ArchiveError, LayerDescriptor, LayerTensor, read_layer_tensors
from .gram import GramStats, deviation, fit_gram_stats
from .metrics import min_count_for_fraction
from .ocsvm import OcsvmConfig, OcsvmModel, decision_values, fit_ocsvm
from .ops import rectify, reduce_spatial

KIND_OCSVM = "ocsvm"
KIND_GRAM = "gram"
HIGHER_IS_ID = "higher_is_id"
HIGHER_IS_OOD = "higher_is_ood"

Orientation = Literal["higher_is_id", "higher_is_ood"]

BUNDLE_NAME = "bundle.json"
BUNDLE_VERSION = 1
SVM_MAGIC = b"OSVM"
# magic, version, layer_index, n_sv, dim, gamma, rho
_SVM_HEADER = struct.Struct("<4sIIQIdd")


@dataclass
class PipelineConfig:
    theta: float = 0.95
    svm_rectify_c: float = 1.0
    gram_rectify_c: float = 1.0
    ocsvm: OcsvmConfig = field(default_factory=OcsvmConfig)
    gram_p: int = 1
    forced_layer: int | None = None
    tpr_target: float = 0.95

    def validate(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if not 0.0 < self.tpr_target < 1.0:
            raise ValueError(f"tpr_target must be in (0, 1), got {self.tpr_target}")
        if not np.isfinite(self.svm_rectify_c) or not np.isfinite(self.gram_rectify_c):
            raise ValueError("rectification thresholds must be finite")
        if self.gram_p < 1:
            raise ValueError(f"gram_p must be >= 1, got {self.gram_p}")
        self.ocsvm.validate()


@dataclass
class LayerDetectorReport:
    layer_index: int
    detector_kind: str
    calibration_threshold: float
    tnr_on_tune: float


@dataclass
class ScoredSample:
    sample_id: str
    raw_score: float
    normality: float
    decision: str
    layer_scores: dict[int, float] | None = None


@dataclass
class DetectorBundle:
    """Everything a trained pipeline needs to score new archives."""

    model_id: str
    layers: list[LayerDescriptor]
    config: PipelineConfig
    svm_models: dict[int, OcsvmModel]
    gram_stats: GramStats
    validation_scores: dict[int, np.ndarray]  # sorted ascending per layer
    thresholds: dict[int, float]
    selected_layer: int | None = None
    selected_kind: str | None = None
    reports: list[LayerDetectorReport] = field(default_factory=list)

    def kind_for(self, layer_index: int) -> str:
        if not any(d.index == layer_index for d in self.layers):
            raise ValueError(f"layer {layer_index} is not part of this bundle")
        return KIND_GRAM if layer_index == self.layers[-1].index else KIND_OCSVM


def _require_only_id(archive: Archive, role: str) -> None:
    for record in archive.manifest.samples:
        if record.label != "id":
            raise ValueError(
                f"{role} archive contains sample {record.id!r} with label "
                f"{record.label!r}; only id-labeled samples are allowed here"
            )


def _check_layers_match(expected: list[LayerDescriptor], archive: Archive, role: str) -> None:
    if list(archive.manifest.layers) != list(expected):
        raise ValueError(f"{role} archive declares different layers than the bundle")


def _svm_features(tensors: Iterable[LayerTensor], clip: float) -> np.ndarray:
    rows = [reduce_spatial(rectify(t, clip)).values for t in tensors]
    if not rows:
        return np.zeros((0, 0))
    return np.stack(rows)


def calibrate_threshold(
    id_validation_raw_scores: np.ndarray,
    orientation: Orientation,
    tpr_target: float,
) -> float:
    """Raw-score threshold passing the smallest ID fraction >= tpr_target.

    The ID side includes equality: score >= t for higher_is_id detectors,
    score <= t for higher_is_ood ones.
    """
    scores = np.sort(np.asarray(id_validation_raw_scores, dtype=np.float64))
    if scores.size == 0:
        raise ValueError("cannot calibrate a threshold on an empty score list")
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    k = min_count_for_fraction(scores.size, tpr_target)
    if orientation == HIGHER_IS_ID:
        return float(scores[scores.size - k])
    if orientation == HIGHER_IS_OOD:
        return float(scores[k - 1])
    raise ValueError(f"unknown orientation {orientation!r}")


def fit_bundle(
    train_archive: Archive,
    validation_archive: Archive,
    config: PipelineConfig | None = None,
) -> DetectorBundle:
    """Fit all per-layer detectors on ID data.

    Both archives must declare identical layers and contain only
    id-labeled samples.  The returned bundle is unselected unless the
    config carries forced_layer.
    """
    config = config or PipelineConfig()
    config.validate()
    train_manifest = train_archive.manifest
    _check_layers_match(list(train_manifest.layers), validation_archive, "validation")
    _require_only_id(train_archive, "train")
    _require_only_id(validation_archive, "validation")
    if not train_manifest.samples:
        raise ValueError("train archive has no samples")
    if not validation_archive.manifest.samples:
        raise ValueError("validation archive has no samples")
    last_index = train_manifest.layers[-1].index
    svm_models: dict[int, OcsvmModel] = {}
    gram_stats: GramStats | None = None
    validation_scores: dict[int, np.ndarray] = {}
    thresholds: dict[int, float] = {}
    for descriptor in train_manifest.layers:
        train_tensors = read_layer_tensors(train_archive, descriptor.index)
        val_tensors = read_layer_tensors(validation_archive, descriptor.index)
        if descriptor.index == last_index:
            gram_stats = fit_gram_stats(
                train_tensors, val_tensors, config.gram_p, config.gram_rectify_c
            )
            scores = np.array(
                [deviation(gram_stats, t, config.gram_rectify_c) for t in val_tensors]
            )
            orientation: Orientation = HIGHER_IS_OOD
        else:
            features = _svm_features(train_tensors, config.svm_rectify_c)
            model = fit_ocsvm(features, config.ocsvm, layer_index=descriptor.index)
            svm_models[descriptor.index] = model
            scores = decision_values(model, _svm_features(val_tensors, config.svm_rectify_c))
            orientation = HIGHER_IS_ID
        scores = np.sort(scores)
        validation_scores[descriptor.index] = scores
        thresholds[descriptor.index] = calibrate_threshold(
            scores, orientation, config.tpr_target
        )
    assert gram_stats is not None
    bundle = DetectorBundle(
        model_id=train_manifest.model_id,
        layers=list(train_manifest.layers),
        config=config,
        svm_models=svm_models,
        gram_stats=gram_stats,
        validation_scores=validation_scores,
        thresholds=thresholds,
    )
    if config.forced_layer is not None:
        bundle.selected_layer = config.forced_layer
        bundle.selected_kind = bundle.kind_for(config.forced_layer)
    return bundle


def _layer_raw_scores(
    bundle: DetectorBundle, layer_index: int, tensors: list[LayerTensor]
) -> np.ndarray:
    kind = bundle.kind_for(layer_index)
    if kind == KIND_GRAM:
        return np.array(
            [deviation(bundle.gram_stats, t, bundle.config.gram_rectify_c) for t in tensors]
        )
    model = bundle.svm_models.get(layer_index)
    if model is None:
        raise ValueError(f"layer {layer_index} has no fitted detector")
    if not tensors:
        return np.zeros(0)
    return decision_values(model, _svm_features(tensors, bundle.config.svm_rectify_c))


def layer_tnr(bundle: DetectorBundle, layer_index: int, tune_ood_archive: Archive) -> float:
    """Fraction of tune OOD samples on the OOD side of the layer's threshold."""
    _check_layers_match(bundle.layers, tune_ood_archive, "tune")
    if layer_index not in bundle.thresholds:
        raise ValueError(f"layer {layer_index} is unfitted")
    tensors = read_layer_tensors(
        tune_ood_archive, layer_index, lambda record: record.label == "ood"
    )
    if not tensors:
        raise ValueError("tune archive has no ood-labeled samples; TNR is undefined")
    scores = _layer_raw_scores(bundle, layer_index, tensors)
    threshold = bundle.thresholds[layer_index]
    if bundle.kind_for(layer_index) == KIND_GRAM:
        true_negatives = int((scores > threshold).sum())
    else:
        true_negatives = int((scores < threshold).sum())
    return true_negatives / scores.size


def select_layer(bundle: DetectorBundle, tune_ood_archive: Archive) -> DetectorBundle:
    """Pick the scoring layer by maximum tune TNR (ties: smallest index)."""
    reports: list[LayerDetectorReport] = []
    best_layer: int | None = None
    best_tnr = -1.0
    for descriptor in bundle.layers:
        tnr = layer_tnr(bundle, descriptor.index, tune_ood_archive)
        reports.append(
            LayerDetectorReport(
                descriptor.index,
                bundle.kind_for(descriptor.index),
                bundle.thresholds[descriptor.index],
                tnr,
            )
        )
        if tnr > best_tnr:
            best_tnr = tnr
            best_layer = descriptor.index
    assert best_layer is not None
    return replace(
        bundle,
        selected_layer=best_layer,
        selected_kind=bundle.kind_for(best_layer),
        reports=reports,
    )


def _normality_from_raw(
    bundle: DetectorBundle, layer_index: int, raw: np.ndarray
) -> np.ndarray:
    """Fraction of stored ID validation scores strictly more OOD-like."""
    stored = bundle.validation_scores[layer_index]
    raw = np.asarray(raw, dtype=np.float64)
    if bundle.kind_for(layer_index) == KIND_GRAM:
        more_ood = stored.size - np.searchsorted(stored, raw, side="right")
    else:
        more_ood = np.searchsorted(stored, raw, side="left")
    return more_ood / stored.size


def normality_score(
    bundle: DetectorBundle, sample_features: Mapping[int, LayerTensor]
) -> float:
    """Calibrated score in [0, 1] for one sample, higher = more ID-like."""
    if bundle.selected_layer is None:
        raise ValueError("selected layer is unset; run select_layer or set forced_layer")
    tensor = sample_features.get(bundle.selected_layer)
    if tensor is None:
        raise ValueError(f"sample features are missing layer {bundle.selected_layer}")
    raw = _layer_raw_scores(bundle, bundle.selected_layer, [tensor])
    return float(_normality_from_raw(bundle, bundle.selected_layer, raw)[0])


def decide(normality: float, config: PipelineConfig) -> str:
    """ID iff the sample ranks strictly above the (1 - theta) tail."""
    return "ID" if normality > 1.0 - config.theta else "OOD"


def score_archive(
    bundle: DetectorBundle, archive: Archive, diagnostics: bool = False
) -> list[ScoredSample]:
    """Score every sample of an archive with the selected layer.

    With diagnostics=True each result also carries the raw score of every
    fitted layer.
    """
    _check_layers_match(bundle.layers, archive, "scored")
    if bundle.selected_layer is None:
        raise ValueError("selected layer is unset; run select_layer or set forced_layer")
    manifest = archive.manifest
    if not manifest.samples:
        return []
    selected = bundle.selected_layer
    raw = _layer_raw_scores(bundle, selected, read_layer_tensors(archive, selected))
    normality = _normality_from_raw(bundle, selected, raw)
    per_layer: dict[int, np.ndarray] = {}
    if diagnostics:
        for descriptor in bundle.layers:
            if descriptor.index == selected:
                per_layer[descriptor.index] = raw
            else:
                per_layer[descriptor.index] = _layer_raw_scores(
                    bundle, descriptor.index, read_layer_tensors(archive, descriptor.index)
                )
    out: list[ScoredSample] = []
    for position, record in enumerate(manifest.samples):
        layer_scores = (
            {index: float(values[position]) for index, values in per_layer.items()}
            if diagnostics
            else None
        )
        value = float(normality[position])
        out.append(
            ScoredSample(record.id, float(raw[position]), value, decide(value, bundle.config), layer_scores)
        )
    return out


def write_scores_csv(
    scored: list[ScoredSample],
    destination: str | Path,
    diagnostics_layers: list[int] | None = None,
) -> None:
    with open(destination, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["sample_id", "raw_score", "normality", "decision"]
        extra = diagnostics_layers or []
        header += [f"layer_{index}_raw" for index in extra]
        writer.writerow(header)
        for sample in scored:
            row = [sample.sample_id, repr(sample.raw_score), repr(sample.normality), sample.decision]
            row += [repr((sample.layer_scores or {})[index]) for index in extra]
            writer.writerow(row)


def _config_to_doc(config: PipelineConfig) -> dict:
    gamma = config.ocsvm.gamma
    return {
        "theta": config.theta,
        "svm_rectify_c": config.svm_rectify_c,
        "gram_rectify_c": config.gram_rectify_c,
        "gram_p": config.gram_p,
        "tpr_target": config.tpr_target,
        "forced_layer": config.forced_layer,
        "ocsvm": {
            "nu": config.ocsvm.nu,
            "gamma": gamma if isinstance(gamma, str) else float(gamma),
            "tolerance": config.ocsvm.tolerance,
            "max_passes": config.ocsvm.max_passes,
        },
    }


def _config_from_doc(doc: dict) -> PipelineConfig:
    svm = doc["ocsvm"]
    return PipelineConfig(
        theta=float(doc["theta"]),
        svm_rectify_c=float(doc["svm_rectify_c"]),
        gram_rectify_c=float(doc["gram_rectify_c"]),
        ocsvm=OcsvmConfig(
            nu=float(svm["nu"]),
            gamma=svm["gamma"] if isinstance(svm["gamma"], str) else float(svm["gamma"]),
            tolerance=float(svm["tolerance"]),
            max_passes=None if svm["max_passes"] is None else int(svm["max_passes"]),
        ),
        gram_p=int(doc["gram_p"]),
        forced_layer=None if doc["forced_layer"] is None else int(doc["forced_layer"]),
        tpr_target=float(doc["tpr_target"]),
    )


def svm_blob_name(layer_index: int) -> str:
    return f"svm_layer_{layer_index}.bin"


def save_bundle(bundle: DetectorBundle, destination: str | Path) -> Path:
    """Serialize a bundle to a directory (bundle.json plus SVM sidecars)."""
    root = Path(destination)
    root.mkdir(parents=True, exist_ok=True)
    detectors = []
    for descriptor in bundle.layers:
        index = descriptor.index
        entry: dict = {
            "layer_index": index,
            "kind": bundle.kind_for(index),
            "calibration_threshold": float(bundle.thresholds[index]),
            "validation_scores": [float(v) for v in bundle.validation_scores[index]],
        }
        if entry["kind"] == KIND_GRAM:
            stats = bundle.gram_stats
            entry.update(
                {
                    "order_p": stats.p,
                    "norm_lo": stats.norm_lo,
                    "norm_hi": stats.norm_hi,
                    "channel_min": [float(v) for v in stats.channel_min],
                    "channel_max": [float(v) for v in stats.channel_max],
                    "expected_deviation": stats.expected_deviation,
                }
            )
        detectors.append(entry)
    doc = {
        "bundle_version": BUNDLE_VERSION,
        "model_id": bundle.model_id,
        "layers": [
            {
                "index": d.index,
                "name": d.name,
                "channels": d.channels,
                "width": d.width,
                "height": d.height,
            }
            for d in bundle.layers
        ],
        "config": _config_to_doc(bundle.config),
        "selected_layer": bundle.selected_layer,
        "selected_kind": bundle.selected_kind,
        "detectors": detectors,
        "reports": [
            {
                "layer_index": r.layer_index,
                "detector_kind": r.detector_kind,
                "calibration_threshold": r.calibration_threshold,
                "tnr_on_tune": r.tnr_on_tune,
            }
            for r in bundle.reports
        ],
    }
    (root / BUNDLE_NAME).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    for index, model in bundle.svm_models.items():
        with open(root / svm_blob_name(index), "wb") as fh:
            fh.write(
                _SVM_HEADER.pack(
                    SVM_MAGIC,
                    BUNDLE_VERSION,
                    index,
                    len(model.alphas),
                    model.dim,
                    float(model.gamma),
                    float(model.rho),
                )
            )
            fh.write(np.ascontiguousarray(model.alphas, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(model.support_vectors, dtype="<f4").tobytes())
    return root


def _load_svm(path: Path, layer_index: int) -> OcsvmModel:
    payload = path.read_bytes()
    if len(payload) < _SVM_HEADER.size:
        raise ArchiveError(f"{path.name} is shorter than its header")
    magic, version, index, n_sv, dim, gamma, rho = _SVM_HEADER.unpack_from(payload)
    if magic != SVM_MAGIC:
        raise ArchiveError(f"{path.name} starts with {magic!r}, expected {SVM_MAGIC!r}")
    if version != BUNDLE_VERSION:
        raise ArchiveError(f"{path.name} declares version {version}")
    if index != layer_index:
        raise ArchiveError(f"{path.name} is for layer {index}, expected {layer_index}")
    offset = _SVM_HEADER.size
    alphas = np.frombuffer(payload, dtype="<f8", count=n_sv, offset=offset).astype(np.float64)
    offset += 8 * n_sv
    expected = offset + 4 * n_sv * dim
    if len(payload) != expected:
        raise ArchiveError(f"{path.name} holds {len(payload)} bytes, expected {expected}")
    vectors = (
        np.frombuffer(payload, dtype="<f4", count=n_sv * dim, offset=offset)
        .astype(np.float64)
        .reshape(n_sv, dim)
    )
    return OcsvmModel(
        support_vectors=vectors,
        alphas=alphas,
        rho=float(rho),
        gamma=float(gamma),
        layer_index=layer_index,
        n_training=0,
    )


def load_bundle(path: str | Path) -> DetectorBundle:
    root = Path(path)
    try:
        doc = json.loads((root / BUNDLE_NAME).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArchiveError(f"{root} is not a bundle: no {BUNDLE_NAME}") from None
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"malformed bundle: {exc}") from None
    if doc.get("bundle_version") != BUNDLE_VERSION:
        raise ArchiveError(f"unsupported bundle version {doc.get('bundle_version')}")
    layers = [
        LayerDescriptor(e["index"], e["name"], e["channels"], e["width"], e["height"])
        for e in doc["layers"]
    ]
    config = _config_from_doc(doc["config"])
    svm_models: dict[int, OcsvmModel] = {}
    gram_stats: GramStats | None = None
    validation_scores: dict[int, np.ndarray] = {}
    thresholds: dict[int, float] = {}
    for entry in doc["detectors"]:
        index = int(entry["layer_index"])
        validation_scores[index] = np.asarray(entry["validation_scores"], dtype=np.float64)
        thresholds[index] = float(entry["calibration_threshold"])
        if entry["kind"] == KIND_GRAM:
            gram_stats = GramStats(
                layer_index=index,
                p=int(entry["order_p"]),
                channel_min=np.asarray(entry["channel_min"], dtype=np.float64),
                channel_max=np.asarray(entry["channel_max"], dtype=np.float64),
                norm_lo=float(entry["norm_lo"]),
                norm_hi=float(entry["norm_hi"]),
                expected_deviation=float(entry["expected_deviation"]),
            )
        else:
            svm_models[index] = _load_svm(root / svm_blob_name(index), index)
    if gram_stats is None:
        raise ArchiveError("bundle has no gram detector entry")
    reports = [
        LayerDetectorReport(
            int(r["layer_index"]),
            str(r["detector_kind"]),
            float(r["calibration_threshold"]),
            float(r["tnr_on_tune"]),
        )
        for r in doc["reports"]
    ]
    return DetectorBundle(
        model_id=str(doc["model_id"]),
        layers=layers,
        config=config,
        svm_models=svm_models,
        gram_stats=gram_stats,
        validation_scores=validation_scores,
        thresholds=thresholds,
        selected_layer=None if doc["selected_layer"] is None else int(doc["selected_layer"]),
        selected_kind=None if doc["selected_kind"] is None else str(doc["selected_kind"]),
        reports=reports,
    )
