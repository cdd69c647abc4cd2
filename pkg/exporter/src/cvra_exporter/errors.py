"""Exporter-side errors, including the archive validation set.

The selfcheck validator re-implements the CVRA v1 rules against the format
description rather than sharing code with any consumer, so it carries its
own copies of the validation error types.
"""


class ExporterError(Exception):
    pass


class EncoderLoadError(ExporterError):
    """The requested encoder backend or checkpoint is unavailable."""


class MediaDecodeError(ExporterError):
    """A frame or video file could not be decoded."""


class ManifestError(ExporterError):
    """The input manifest is malformed or references missing data."""


# --- CVRA validation -------------------------------------------------------------

class BadMagic(ExporterError):
    pass


class VersionMismatch(ExporterError):
    pass


class ShapeMismatch(ExporterError):
    pass


class NonFiniteValue(ExporterError):
    pass


class ZeroNormRow(ExporterError):
    pass
