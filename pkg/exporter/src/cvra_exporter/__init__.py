"""cvra-exporter: produce CVRA v1 embedding archives from media and text."""

from .encoders import load_encoder
from .errors import (BadMagic, EncoderLoadError, ExporterError, ManifestError,
                     MediaDecodeError, NonFiniteValue, ShapeMismatch,
                     VersionMismatch, ZeroNormRow)
from .export import ExportJob, ExportReport, export, read_input_manifest
from .selfcheck import SelfcheckReport, selfcheck

__version__ = "0.1.0"

__all__ = [
    "ExportJob", "ExportReport", "export", "read_input_manifest",
    "SelfcheckReport", "selfcheck", "load_encoder",
    "ExporterError", "EncoderLoadError", "MediaDecodeError", "ManifestError",
    "BadMagic", "VersionMismatch", "ShapeMismatch", "NonFiniteValue",
    "ZeroNormRow",
]
