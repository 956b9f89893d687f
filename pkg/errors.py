"""Exception hierarchy shared by every module."""


class HogwildError(Exception):
    """Base class for all errors raised by this package."""


class InvalidModelError(HogwildError, ValueError):
    pass


class BoundsError(HogwildError, IndexError):
    pass


class DimensionError(HogwildError, ValueError):
    pass


class CapacityError(HogwildError):
    """Raised when an exhaustive computation would exceed the enumeration limit."""


class DomainError(HogwildError, ValueError):
    """Raised when a bound is requested outside Dobrushin's regime."""


class InvalidArgumentError(HogwildError, ValueError):
    pass


class EmptyInputError(HogwildError, ValueError):
    pass


class InsufficientDataError(HogwildError, ValueError):
    pass


class ValidationError(HogwildError, ValueError):
    pass


class SchemaError(HogwildError, ValueError):
    """Invalid experiment config; `field` is the dotted path of the offending key."""

    def __init__(self, field, message):
        super().__init__(f'{field}: {message}')
        self.field = field


class ParseError(HogwildError, ValueError):
    """Malformed description file, with the 1-based line that failed."""

    def __init__(self, path, line, message):
        super().__init__(f'{path}:{line}: {message}')
        self.path = path
        self.line = line
