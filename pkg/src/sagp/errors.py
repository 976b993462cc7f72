"""Exception types shared across the package."""


class SagpError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SagpError, ValueError):
    """Matrix dimensions incompatible with the requested operation."""


class DomainError(SagpError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. log of <= 0)."""


class MalformedEvidenceError(SagpError, ValueError):
    """Evidence piece is missing fields required by its kind."""


class MissingEmbeddingError(SagpError, KeyError):
    """File-lookup embedding provider has no vector for the requested key."""


class DatasetError(SagpError, ValueError):
    """Instance file failed to parse or violated an invariant."""


class CheckpointError(SagpError, ValueError):
    """Checkpoint file unreadable, truncated, or of an unsupported version."""
