"""Exception hierarchy shared by every dialkit module."""


class DialkitError(Exception):
    """Base class for all errors raised by dialkit."""


class ContractError(DialkitError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Input shapes do not conform to what an operation expects."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        shown = ", ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ConfigurationError(DialkitError, ValueError):
    pass


class NumericError(DialkitError, ArithmeticError):
    pass


class SamplingError(DialkitError, ValueError):
    pass


class IngestionError(DialkitError, ValueError):
    """A data file violates its JSONL schema."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class CheckpointError(DialkitError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass
