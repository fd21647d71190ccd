from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid shapes, specs or configuration values."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message: str, layer: int | None = None, digest: str | None = None):
        super().__init__(message)
        self.layer = layer
        self.digest = digest


class ContractError(RuntimeError):
    """An operation was called in a state where it is not allowed."""


class ProtocolError(ValueError):
    """Malformed wire frame."""

    def __init__(self, message: str, tag: int | None = None):
        super().__init__(message)
        self.tag = tag


class CheckpointError(ValueError):
    """Corrupt or truncated checkpoint bytes."""
