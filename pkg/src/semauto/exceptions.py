"""Exception types raised across the package."""


class SemAutoError(Exception):
    """Base class for package errors."""


class ContractError(SemAutoError, ValueError):
    """A precondition on an argument was violated."""


class ParseError(SemAutoError, ValueError):
    """A record in an input file could not be parsed."""

    def __init__(self, message, lineno=None):
        super().__init__(message)
        self.lineno = lineno


class FormatError(SemAutoError, ValueError):
    """A persisted artifact has a bad header, version or body."""


class EmptyFeatureMapError(SemAutoError):
    """No triple matched the requested predicates for any mapped item."""


class UserNotTrainable(SemAutoError):
    """The user has fewer than two rated items known to the knowledge graph."""

    def __init__(self, user_id, n_mapped):
        super().__init__(
            f"user {user_id!r} has {n_mapped} rated item(s) in the feature map; at least 2 are required"
        )
        self.user_id = user_id
        self.n_mapped = n_mapped


class TrainingDiverged(SemAutoError, FloatingPointError):
    """Training produced a non-finite loss, usually from a too large learning rate."""

    def __init__(self, epoch, learning_rate):
        super().__init__(
            f"non-finite loss at epoch {epoch}; learning_rate={learning_rate} is probably too high"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate


class SparqlError(SemAutoError):
    """Endpoint retrieval failed; ``partial`` holds the batches that did complete."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigError(SemAutoError, ValueError):
    """Invalid configuration file, flag or environment override."""
