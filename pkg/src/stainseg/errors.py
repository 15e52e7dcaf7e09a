"""Exception types shared across the toolkit."""

from __future__ import annotations


class StainsegError(Exception):
    """Base class for all toolkit errors."""


class TooFewTissuePixels(StainsegError):
    """Not enough above-threshold pixels to estimate a stain basis."""


class DegenerateStainCloud(StainsegError):
    """The OD pixel cloud is effectively one-dimensional (single stain)."""


class SingularBasis(StainsegError):
    """Stain vectors are (numerically) parallel."""


class EmptyRegion(StainsegError):
    """A mask has no foreground or no background pixels."""


class TargetTooSmall(StainsegError):
    """Padding target is smaller than the source image."""


class DimensionMismatch(StainsegError):
    """Two rasters that must share a shape do not."""


class EmptyInput(StainsegError):
    """An operation received an empty collection."""


class PredictorFailure(StainsegError):
    """An external predictor failed for one variant."""

    def __init__(self, variant_id: str, message: str):
        super().__init__(f"predictor failed for variant {variant_id!r}: {message}")
        self.variant_id = variant_id


class ParseError(StainsegError):
    """A persisted file does not match its schema."""


class BadMagic(ParseError):
    """A binary file does not start with the expected magic bytes."""


class LabelOverflow(StainsegError):
    """An instance id does not fit the 16-bit label PNG format."""


class ManifestError(StainsegError):
    """Aggregated manifest validation failure (all problems listed)."""

    def __init__(self, problems: list[str]):
        super().__init__("manifest invalid:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = list(problems)


class StageFailure(StainsegError):
    """A pipeline stage aborted; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
