"""Exception hierarchy shared across the package."""


class SingoptError(Exception):
    """Base class for all errors raised by singopt."""


class InvalidInput(SingoptError, ValueError):
    pass


class DomainError(SingoptError, ValueError):
    """Raised when an operation is evaluated outside its domain (e.g. antipodal log)."""


class UnsupportedOperation(SingoptError, NotImplementedError):
    pass


class PreconditionError(SingoptError, ValueError):
    pass


class EmptyRegion(SingoptError, ValueError):
    pass


class IllConditionedFit(SingoptError, ValueError):
    pass


class IncompleteInput(SingoptError, ValueError):
    pass


class InsufficientData(SingoptError, ValueError):
    pass


class NotApplicable(SingoptError, ValueError):
    pass


class SubsolverStall(SingoptError, RuntimeError):
    pass


class ConfigError(SingoptError, ValueError):
    pass
