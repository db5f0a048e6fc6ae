"""Exception hierarchy shared across the package."""


class SpotkitError(Exception):
    """Base class for all spotkit errors."""


# --- dataset manifest ---------------------------------------------------


class MalformedDocument(SpotkitError):
    """Input is not parseable JSON."""


class SchemaViolation(SpotkitError):
    """A required field is missing or has the wrong type/value."""


class UnknownVersion(SpotkitError):
    """Manifest declares a format_version this build does not understand."""


class InvalidManifest(SpotkitError):
    """Manifest failed strict validation before serialization."""


class MissingLabelFile(SpotkitError):
    """A legacy match directory referenced by the mapping has no label file."""


class UnparseableGameTime(SpotkitError):
    """A legacy game-time string could not be parsed."""


class UnknownLegacyLabel(SpotkitError):
    """A legacy label has no mapping entry (strict conversion only)."""


# --- data pipeline -------------------------------------------------------


class CorruptFeatureFile(SpotkitError):
    """Feature file header disagrees with its payload."""


class NonFiniteValues(SpotkitError):
    """Loaded tensor contains NaN or infinite entries."""


class DecoderUnavailable(SpotkitError):
    """No decode backend registered under the requested key."""


class DecodeFailure(SpotkitError):
    """Backend failed while decoding a video."""


class UnsupportedCodec(SpotkitError):
    """Backend does not understand the container/codec of the input."""


# --- models ---------------------------------------------------------------


class AllMasked(SpotkitError):
    """Pooling was asked to reduce a window with no unmasked rows."""


class EmptyHalf(SpotkitError):
    """Temporally-aware pooling received a half with no unmasked rows."""


class ShapeMismatch(SpotkitError):
    """Tensor shapes are inconsistent with the model configuration."""


class InvalidZoneParams(SpotkitError):
    """Context-loss zone boundaries violate K1 <= K2 <= 0 <= K3 <= K4."""


class CheckpointMismatch(SpotkitError):
    """Checkpoint was produced by a different model key or configuration."""


# --- evaluation -----------------------------------------------------------


class NonPositiveTolerance(SpotkitError):
    """Matching tolerances must be strictly positive."""


class VocabularyMismatch(SpotkitError):
    """Prediction and ground-truth manifests disagree on the class set."""


class UnknownVideoInPredictions(SpotkitError):
    """Prediction manifest references a video absent from the ground truth."""


# --- runners / synthetic ----------------------------------------------------


class ConfigError(SpotkitError):
    """Run configuration is missing required keys or has invalid values."""


class DataError(SpotkitError):
    """A loader error, annotated with clip provenance."""


class InvalidSpec(SpotkitError):
    """Synthetic dataset spec has invalid fields."""
