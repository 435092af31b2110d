"""Exception hierarchy shared by every module."""


class BaafeError(Exception):
    """Base class for all errors raised by this package."""


# ffmath
class DuplicateX(BaafeError, ValueError):
    pass


class WrongCount(BaafeError, ValueError):
    pass


class KeyTooLong(BaafeError, ValueError):
    pass


class MalformedShares(BaafeError, ValueError):
    pass


# behavior
class ParseError(BaafeError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingAttribute(BaafeError, ValueError):
    pass


class GapError(BaafeError, ValueError):
    pass


class InsufficientData(BaafeError, ValueError):
    pass


# encoder
class EmptyHistory(BaafeError, ValueError):
    pass


class DegenerateMatrix(BaafeError, ArithmeticError):
    pass


class LengthMismatch(BaafeError, ValueError):
    pass


class GeneratorDrift(BaafeError, ValueError):
    """Stored encoder matrices no longer match what the seed regenerates."""


# thresholds
class NonPositive(BaafeError, ValueError):
    pass


class ZeroSpread(BaafeError, ValueError):
    pass


# vault
class InvalidParams(BaafeError, ValueError):
    pass


class TooFewDistinctCodes(BaafeError, ValueError):
    pass


class ChaffSpaceExhausted(BaafeError, RuntimeError):
    pass


class SchemaError(BaafeError, ValueError):
    pass


class VersionMismatch(BaafeError, ValueError):
    pass


# reconstruct / protocol
class UnknownApp(BaafeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class Duplicate(BaafeError, ValueError):
    pass


class EnrollFailed(BaafeError, RuntimeError):
    pass


class TransportError(BaafeError, ConnectionError):
    pass


class StoreCorrupt(BaafeError, ValueError):
    pass


class BindError(BaafeError, OSError):
    pass
