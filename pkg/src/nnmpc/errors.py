"""Exception hierarchy shared by every stage of the pipeline."""


class NNMPCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(NNMPCError, ValueError):
    pass


class ConfigurationError(NNMPCError):
    pass


class IngestionError(NNMPCError):
    """Raised when a CSV or schedule cannot be turned into a valid frame.

    ``row`` (0-based data row, header excluded) and ``column`` point at the
    offending cell when known.
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class TrainingError(NNMPCError):
    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"{message} at epoch {epoch}"
        super().__init__(message)
        self.epoch = epoch


class SerializationError(NNMPCError):
    pass


class ChecksumError(SerializationError):
    pass


class UnsupportedVersionError(SerializationError):
    pass


class SolverError(NNMPCError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
