"""Exception hierarchy shared by all modules."""


class CexRepairError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CexRepairError, ValueError):
    pass


class ParseError(CexRepairError, ValueError):
    """Malformed input text; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidBox(CexRepairError, ValueError):
    pass


class LossKindError(CexRepairError, ValueError):
    pass


class DivergenceError(CexRepairError, ArithmeticError):
    def __init__(self, epoch, value=None):
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite loss ({value}) in epoch {epoch}")


class EmptyDataset(CexRepairError, ValueError):
    pass


class OutOfBox(CexRepairError, ValueError):
    pass


class UnknownProperty(CexRepairError, KeyError):
    pass


class SpecError(CexRepairError, ValueError):
    """A property is not compatible with the network it is used with."""


class UnsupportedAtom(CexRepairError, TypeError):
    pass


class BudgetError(CexRepairError, ValueError):
    pass
