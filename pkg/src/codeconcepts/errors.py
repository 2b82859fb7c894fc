"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto its exit codes: ``DataError`` subclasses exit with 2,
``NumericError`` subclasses with 3.
"""


class CodeConceptsError(Exception):
    """Base class for all package errors."""


class DataError(CodeConceptsError):
    pass


class NumericError(CodeConceptsError):
    pass


# lexing / segmentation
class EmptyInput(DataError):
    pass


class UnterminatedLiteral(DataError):
    pass


class UnbalancedBraces(DataError):
    pass


class UnbalancedParens(DataError):
    pass


# concept extraction
class PreconditionViolated(DataError):
    pass


class InvalidIndex(DataError):
    pass


# value abstraction
class MalformedValue(DataError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"event {index}: {message}")
        self.index = index


class DanglingStatementId(DataError):
    pass


# datasets
class EmptyDataset(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, message, lineno):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class InvalidRate(DataError):
    pass


class VocabExhausted(DataError):
    pass


class AuditFailure(DataError):
    """A perturbation changed a concept vector or an end label."""

    def __init__(self, message, diffs=()):
        super().__init__(message)
        self.diffs = list(diffs)


# training / metrics
class ShapeMismatch(NumericError):
    pass


class DomainError(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class SplitLeakage(DataError):
    pass


class LengthMismatch(DataError):
    pass


class DatasetMismatch(DataError):
    pass
