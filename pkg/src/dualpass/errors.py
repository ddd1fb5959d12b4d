"""Exception hierarchy shared by every dualpass module."""

from __future__ import annotations


class DualPassError(Exception):
    """Base class. ``code`` is the name sent over the wire."""

    @property
    def code(self) -> str:
        return type(self).__name__


# converter
class MalformedLabel(DualPassError, ValueError):
    pass


class ArityMismatch(DualPassError, ValueError):
    pass


class LengthMismatch(DualPassError, ValueError):
    pass


class AlphabetViolation(DualPassError, ValueError):
    pass


class GenerationExhausted(DualPassError, RuntimeError):
    pass


class InfeasibleBudget(DualPassError, ValueError):
    pass


class InvalidConverter(DualPassError, ValueError):
    pass


# identifier
class InvalidStrategy(DualPassError, ValueError):
    pass


class RowOutOfRange(DualPassError, ValueError):
    pass


# store
class DuplicateUsername(DualPassError):
    pass


class DeviceAlreadyBound(DualPassError):
    pass


class UnknownAccount(DualPassError, KeyError):
    pass


class StoreCorrupt(DualPassError):
    pass


# server
class ProtocolError(DualPassError):
    pass


class PolicyViolation(DualPassError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(v.detail for v in self.violations))


class NotASmartphone(DualPassError):
    pass


class NotAuthenticated(DualPassError):
    pass


class NotRegisteredDevice(DualPassError):
    pass


class TokenExpired(DualPassError):
    pass


class TokenUsed(DualPassError):
    pass


class TokenUnknown(DualPassError):
    pass


class AccountMismatch(DualPassError):
    pass


class Unauthorized(DualPassError):
    pass
