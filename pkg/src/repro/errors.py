"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class ReproError(Exception):
    """Base class for all pipeline errors."""


class EmptyDocument(ReproError):
    pass


class GatewayError(ReproError):
    """Model backend failed permanently (after retries) or is misconfigured."""


class TransientError(GatewayError):
    """Raised by backends for failures worth retrying (timeouts, 429, 5xx)."""


class ReplayMiss(GatewayError):
    def __init__(self, key: str, purpose: str = "") -> None:
        super().__init__(f"no recorded transcript for key {key} (purpose={purpose or '?'})")
        self.key = key
        self.purpose = purpose


class ParseFailure(ReproError):
    """Model output did not contain a well-formed candidate of the wanted kind."""

    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


class SpanError(ReproError):
    pass


class GroundingMiss(ReproError):
    pass


class StageFailure(ReproError):
    def __init__(self, stage: str, detail: str = "") -> None:
        super().__init__(f"stage {stage} failed: {detail}" if detail else f"stage {stage} failed")
        self.stage = stage
        self.detail = detail


class RubricError(ReproError):
    """Rubric file does not match the expected schema."""


class UngradedLeaf(RubricError):
    pass


class DegenerateWeights(RubricError):
    pass


class EmptyRubric(RubricError):
    pass


class InputError(ReproError):
    """Bad command-line input, configuration or run directory state."""
