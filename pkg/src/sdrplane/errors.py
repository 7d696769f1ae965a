"""Exception hierarchy shared by every layer of the data plane.

Every error carries a stable ``code`` (its class name) so the control
protocol can report it without leaking Python tracebacks.
"""

from __future__ import annotations


class SdrError(Exception):
    """Base class for all data-plane errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# -- framing ---------------------------------------------------------------

class FramingError(SdrError, ValueError):
    pass


class InconsistentLength(FramingError):
    pass


class OversizeMtu(FramingError):
    pass


class Truncated(FramingError):
    pass


class BadLength(FramingError):
    pass


class OversizeFrame(FramingError):
    pass


class CorruptFrame(FramingError):
    pass


# -- units and registers -----------------------------------------------------

class CatalogError(SdrError):
    pass


class DuplicateKind(CatalogError):
    pass


class InvalidDescriptor(CatalogError, ValueError):
    pass


class UnknownKind(CatalogError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


class RegisterError(SdrError):
    pass


class UnknownOffset(RegisterError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class UnknownRegister(UnknownOffset):
    pass


class ValueOutOfRange(RegisterError, ValueError):
    pass


class ParamOutOfRange(ValueOutOfRange):
    pass


class UnsupportedLength(ParamOutOfRange):
    pass


class InvalidRate(ParamOutOfRange):
    pass


class LengthNotMultiple(SdrError, ValueError):
    pass


class LinkError(SdrError):
    pass


class PortOccupied(LinkError):
    pass


class NoSuchPort(LinkError):
    pass


class ItemTypeMismatch(LinkError):
    pass


class WouldBlock(LinkError):
    """A bounded link stayed full (push) or empty (pop) for the whole timeout."""


# -- crossbar ----------------------------------------------------------------

class CrossbarError(SdrError):
    pass


class DuplicateRoute(CrossbarError):
    pass


class NoRoute(CrossbarError):
    pass


class MalformedCommand(CrossbarError, ValueError):
    pass


# -- chain manager -----------------------------------------------------------

class ChainError(SdrError):
    pass


class ChainSyntaxError(ChainError, ValueError):
    pass


class DanglingPort(ChainError):
    pass


class InvalidChain(ChainError, ValueError):
    pass


class AdmissionFailed(ChainError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class UnknownChain(ChainError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class OccupantTooLarge(ChainError):
    pass


class IncompatibleBoundary(ChainError):
    pass


class UnknownPrr(ChainError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


# -- MAC / DMA ---------------------------------------------------------------

class DmaError(SdrError):
    pass


class RingFull(DmaError):
    pass


class OversizePacket(DmaError, ValueError):
    pass


class BudgetExceeded(DmaError, ValueError):
    pass


# -- RF ----------------------------------------------------------------------

class RfError(SdrError):
    pass


class UnknownParam(RfError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class OutOfRange(RfError, ValueError):
    pass


# -- cluster transport -------------------------------------------------------

class TransportError(SdrError):
    pass


class ConnectionRefused(TransportError, ConnectionError):
    pass


class DuplicateDevice(TransportError):
    pass


class LinkDown(TransportError, ConnectionError):
    def __init__(self, message: str, packet=None):
        super().__init__(message)
        self.packet = packet


class HandshakeError(TransportError):
    pass


# -- control -----------------------------------------------------------------

class ControlError(SdrError):
    pass


class EndpointBusy(ControlError, OSError):
    pass


class ProtocolError(ControlError, ValueError):
    pass
