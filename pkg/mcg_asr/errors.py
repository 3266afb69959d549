"""Exception types shared across the package."""

from typing import Optional, Sequence


class McgAsrError(Exception):
    """Base class for every error raised by mcg_asr."""


class ShapeError(McgAsrError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, primitive: str, left: Sequence[int], right: Optional[Sequence[int]] = None,
                 detail: str = ""):
        self.primitive = primitive
        self.left = tuple(left)
        self.right = tuple(right) if right is not None else None
        msg = f"{primitive}: incompatible shapes {self.left}"
        if self.right is not None:
            msg += f" and {self.right}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class GraphError(McgAsrError):
    """Misuse of the autodiff graph (double backward, lineage violations)."""


class ConfigError(McgAsrError):
    """Invalid or inconsistent configuration."""


class NumericError(McgAsrError):
    """A non-finite value showed up where a finite one is required."""

    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        super().__init__(message)


class CtcError(McgAsrError):
    """The CTC target cannot be aligned to the available frames."""


class SignalError(McgAsrError):
    """Audio or feature-extraction precondition failed."""


class DataError(McgAsrError):
    """Manifest, corpus or batching problem."""
