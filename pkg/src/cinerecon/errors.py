"""Exception types. Each carries a short machine-readable ``category`` used by the CLI."""


class CineReconError(Exception):
    category = "error"


class ValidationError(CineReconError, ValueError):
    category = "validation"


class DataError(CineReconError):
    category = "data"


class SchemaError(CineReconError):
    category = "schema"


class PreconditionError(CineReconError):
    category = "precondition"
