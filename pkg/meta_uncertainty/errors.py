"""Error hierarchy shared by every module and mapped to CLI exit codes."""
from typing import Optional


class MetaUncertaintyError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 1


class InputError(MetaUncertaintyError, ValueError):
    """Bad user input: dataset, schema, configuration or arguments."""

    exit_code = 2


class SchemaMismatchError(InputError):
    """CSV header does not match the dataset schema."""

    def __init__(self, message: str, column: Optional[str] = None):
        super().__init__(message)
        self.column = column


class UnparseableCellError(InputError):
    """A cell could not be parsed as its column's feature kind."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyDatasetError(InputError):
    pass


class SingleClassError(InputError):
    pass


class MissingValueError(InputError):
    pass


class ClassTooSmallError(InputError):
    """A class has fewer members than an operation needs."""

    def __init__(self, message: str, class_label: Optional[str] = None):
        super().__init__(message)
        self.class_label = class_label


class ConfigError(InputError):
    pass


class EmptyPoolError(InputError):
    pass


class LengthMismatchError(InputError):
    pass


class DegenerateInputError(InputError):
    """Input is well-formed but mathematically unusable (e.g. one flag value)."""


class MissingArtifactError(MetaUncertaintyError, FileNotFoundError):
    exit_code = 3


class VersionMismatchError(MetaUncertaintyError):
    exit_code = 4


class DegenerateSeparatorError(MetaUncertaintyError):
    """The reference linear separator has a zero weight vector."""


class FoldProcessingError(MetaUncertaintyError):
    """A cross-validation fold could not be processed."""

    def __init__(self, message: str, fold: int):
        super().__init__(f"fold {fold}: {message}")
        self.fold = fold
        self.reason = message

    def __reduce__(self):
        return (type(self), (self.reason, self.fold))


class DatasetFailure(MetaUncertaintyError):
    """A dataset failed while building the knowledge base."""

    def __init__(self, dataset_id: str, reason: str):
        super().__init__(f"{dataset_id}: {reason}")
        self.dataset_id = dataset_id
        self.reason = reason

    def __reduce__(self):
        return (type(self), (self.dataset_id, self.reason))
