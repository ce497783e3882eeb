"""Exception hierarchy shared across the library."""


class MMFuseError(Exception):
    """Base class for all library errors."""


class DimensionError(MMFuseError):
    """Shapes or extents are incompatible for the requested operation."""


class DomainError(MMFuseError):
    """An argument lies outside the mathematical domain of the operation."""


class ContractError(MMFuseError):
    """A documented precondition was violated by the caller."""


class FormatError(MMFuseError):
    """A container file is malformed (bad magic, version, or truncation)."""


class SchemaError(FormatError):
    """Container header dimensions disagree with the expected schema."""


class ConfigError(MMFuseError):
    """An experiment configuration is invalid (unknown key, bad range)."""


class TrainingDiverged(MMFuseError):
    """A loss term became non-finite during training."""

    def __init__(self, term, epoch=None):
        self.term = term
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"non-finite value in loss term '{term}'{where}")
