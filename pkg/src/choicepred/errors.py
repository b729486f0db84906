"""Exception types shared across the toolkit."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class UnsupportedInputError(ValueError):
    """A model cannot handle this input in its configured mode (e.g. ambiguity in strict mode)."""


class IngestError(ValueError):
    """A data file could not be parsed; carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class SchemaMismatchError(ValueError):
    """A model and a design matrix were built against different column schemas."""


class UndefinedEnoError(ValueError):
    """ENO is undefined when the MSE does not exceed the curve's floor."""
