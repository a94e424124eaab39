"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of the operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class GraphStateError(RuntimeError):
    """A computation graph was reused after being consumed by backward."""


class ConfigError(ValueError):
    """Invalid model, augmentation, or run configuration."""


class FormatError(ValueError):
    """A serialized file is malformed; message carries the byte offset."""


class DegenerateInputError(ValueError):
    """Statistics requested on input where every contributing set is empty."""


class TrainingAborted(RuntimeError):
    """Training stopped early (non-finite loss); partial metrics were flushed."""
