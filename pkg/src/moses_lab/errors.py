"""Exception hierarchy shared by all modules."""


class MosesLabError(ValueError):
    """Base class; ``kind`` is a short machine-readable tag."""

    kind = "error"


class InvalidTask(MosesLabError):
    kind = "invalid-task"


class InvalidConfig(MosesLabError):
    kind = "invalid-config"


class ImmutableSpace(MosesLabError):
    kind = "immutable-space"


class SpaceTooLarge(MosesLabError):
    kind = "space-too-large"


class BadDims(MosesLabError):
    kind = "bad-dims"


class DimMismatch(MosesLabError):
    kind = "dim-mismatch"


class ShapeMismatch(MosesLabError):
    kind = "shape-mismatch"


class VersionMismatch(MosesLabError):
    kind = "version-mismatch"


class CorruptStream(MosesLabError):
    kind = "corrupt-stream"


class InvalidRatio(MosesLabError):
    kind = "invalid-ratio"


class UnnormalizedThreshold(MosesLabError):
    kind = "unnormalized-threshold"


class UnstableDecay(MosesLabError):
    kind = "unstable-decay"


class AdversaryDisabled(MosesLabError):
    kind = "adversary-disabled"


class InfeasibleSplit(MosesLabError):
    kind = "infeasible-split"


class ZeroMean(MosesLabError):
    kind = "zero-mean"


class InsufficientBatches(MosesLabError):
    kind = "insufficient-batches"


class BudgetInfeasible(MosesLabError):
    kind = "budget-infeasible"


class MissingReferenceStrategy(MosesLabError):
    kind = "missing-reference-strategy"


class MismatchedRuns(MosesLabError):
    kind = "mismatched-runs"


class EmptyRows(MosesLabError):
    kind = "empty-rows"


class EmptyDataset(MosesLabError):
    kind = "empty-dataset"


class ParseError(MosesLabError):
    kind = "parse-error"

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class MissingField(ParseError):
    kind = "missing-field"
