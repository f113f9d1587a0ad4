"""Exception types shared across the package.

Each failure mode callers are expected to branch on gets its own class;
everything inherits from FlowmarkError so blanket handling stays possible.
"""


class FlowmarkError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FlowmarkError, ValueError):
    """A tensor did not match the shape contract of an operation."""


class ConfigError(FlowmarkError, ValueError):
    """A run configuration is inconsistent or refers to missing pieces."""


class CheckpointError(FlowmarkError):
    """A checkpoint file is missing, truncated, or of the wrong kind."""


class NumericalError(FlowmarkError):
    """A network produced non-finite values (scale overflow etc.)."""


class TrainingError(FlowmarkError):
    """Training aborted: empty data, diverging loss, or bad preconditions."""


# --- clip ingestion -------------------------------------------------------

class ClipError(FlowmarkError):
    """Base for clip ingestion failures."""


class UnreadableSourceError(ClipError):
    """Source path does not exist or is not a decodable clip."""


class TooFewFramesError(ClipError):
    """Source has fewer frames than the requested temporal window."""


class CorruptFrameError(ClipError):
    """A frame failed to decode or has an inconsistent size."""


# --- external encoder -----------------------------------------------------

class EncoderError(FlowmarkError):
    """Base for external video encoder failures."""


class EncoderMissingError(EncoderError):
    """No encoder binary was found via config, environment, or PATH."""


class EncoderFailedError(EncoderError):
    """The encoder subprocess exited with a nonzero status."""


class FrameCountMismatchError(EncoderError):
    """Decoded clip does not have the same frame count as the input."""
