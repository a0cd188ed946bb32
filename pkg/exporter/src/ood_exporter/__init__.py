"""Capture CNN activation layers into portable feature archives."""

from .archive_writer import LayerSpec, SampleSpec, write_feature_archive
from .capture import (
    ACTIVATION_TYPES,
    BACKBONES,
    ActivationTap,
    CapturePoint,
    CheckpointError,
    list_layers,
    load_model,
)
from .export import ExportError, ExportSpec, ExportSummary, export

__version__ = "0.1.0"

__all__ = [
    "ACTIVATION_TYPES",
    "BACKBONES",
    "ActivationTap",
    "CapturePoint",
    "CheckpointError",
    "ExportError",
    "ExportSpec",
    "ExportSummary",
    "LayerSpec",
    "SampleSpec",
    "export",
    "list_layers",
    "load_model",
    "write_feature_archive",
]
