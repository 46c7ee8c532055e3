"""Exception hierarchy for shape optimisation errors."""

from __future__ import annotations

from typing import Any


class ShapeOptError(Exception):
    """Base class for all errors raised by the toolkit.

    Extra keyword arguments are stored as attributes so callers can inspect
    the failure context (residuals, offending keys, quality reports).
    """

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context = context
        for key, value in context.items():
            setattr(self, key, value)


class InvalidShapeError(ShapeOptError):
    """Raised when a shape description leaves the hold-all domain."""


class MeshGenerationError(ShapeOptError):
    """Raised when an interface segment cannot be recovered in the triangulation."""


class InvalidMeshError(ShapeOptError):
    """Raised when a mesh is unusable (inverted elements, malformed snapshot)."""


class MeshMismatchError(ShapeOptError):
    """Raised when fields or tensors refer to different meshes."""


class SolverError(ShapeOptError):
    """Raised when conjugate gradients does not reach the requested tolerance."""

    def __init__(
        self,
        message: str,
        residual: float = float("nan"),
        residual_history: list[float] | None = None,
    ):
        super().__init__(
            message, residual=residual, residual_history=residual_history or []
        )


class InvalidDeformationError(ShapeOptError):
    """Raised when a deformed mesh fails validation."""


class GramConditioningError(ShapeOptError):
    """Raised when a Gram matrix is too ill-conditioned to solve."""


class DuplicateCentersError(ShapeOptError):
    """Raised when kernel centers coincide."""


class UnsupportedTensorsError(ShapeOptError):
    """Raised when a check only defined for piecewise-constant tensors gets others."""


class ConfigError(ShapeOptError):
    """Raised for invalid run configuration."""

    def __init__(self, message: str, key: str | None = None, **context: Any):
        super().__init__(message, key=key, **context)
