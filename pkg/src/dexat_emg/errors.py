"""Exception hierarchy shared by every module.

`DomainError` subclasses signal a problem with the data or parameters
(CLI exit code 2); anything else is a usage/config problem or a bug.
"""


class DomainError(Exception):
    pass


class MalformedFile(DomainError):
    pass


class NonFiniteValue(DomainError):
    pass


class UnknownLabel(DomainError):
    pass


class WindowTooLong(DomainError):
    pass


class EmptyClass(DomainError):
    pass


class EmptyDataset(DomainError):
    pass


class ShapeMismatch(DomainError):
    pass


class NonFiniteLoss(DomainError):
    pass


class MissingCoefficient(DomainError):
    pass


class InvalidDecay(DomainError):
    pass


class OutOfHardwareRange(DomainError):
    """A mapped parameter does not fit the inhibitory 8-bit weight range."""

    def __init__(self, which: str, value):
        self.which = which
        self.value = value
        super().__init__(f"{which}={value} outside hardware range [1, 255]")
