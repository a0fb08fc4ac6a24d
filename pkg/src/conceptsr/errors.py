"""Exception types shared across the package."""


class ConceptSRError(Exception):
    """Base class for all package errors."""


class ParseError(ConceptSRError, ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownSymbol(ConceptSRError, ValueError):
    def __init__(self, name):
        super().__init__(f"unknown symbol {name!r}")
        self.name = name


class DimensionMismatch(ConceptSRError, ValueError):
    pass


class MissingTarget(ConceptSRError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"target column {self.name!r} not found"


class NonNumericCell(ConceptSRError, ValueError):
    def __init__(self, row, col, value=None):
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")
        self.row = row
        self.col = col
        self.value = value


class NameCollision(ConceptSRError, ValueError):
    pass


class GenerationExhausted(ConceptSRError, RuntimeError):
    pass


class MissingPlaceholderValue(ConceptSRError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"no value bound for placeholder {{{{{self.name}}}}}"


class LlmError(ConceptSRError):
    """Raised by backends; callers fall back to symbolic operators."""


class LlmUnavailable(LlmError):
    pass


class ReplayMiss(LlmError):
    def __init__(self, digest):
        super().__init__(f"no recorded response for prompt digest {digest}")
        self.digest = digest


class ConfigError(ConceptSRError, ValueError):
    pass


class FitDiverged(ConceptSRError, RuntimeError):
    pass
