"""Per-vertex P1 fields attached to a triangulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MeshMismatchError
from .mesh import TriMesh, locate_points, same_geometry


@dataclass(frozen=True, eq=False)
class ScalarFieldP1:
    """Nodal values of a continuous piecewise-linear scalar function."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_vertices,):
            raise MeshMismatchError(
                f"scalar field has shape {values.shape}, "
                f"mesh has {self.mesh.n_vertices} vertices"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, mesh: TriMesh) -> ScalarFieldP1:
        return cls(mesh, np.zeros(mesh.n_vertices))

    @classmethod
    def interpolate(cls, mesh: TriMesh, func) -> ScalarFieldP1:
        """Nodal interpolant of ``func(x, y)``."""
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        return cls(mesh, np.broadcast_to(func(x, y), x.shape).astype(float))

    def element_gradients(self) -> np.ndarray:
        """Constant gradient on every triangle, shape (nt, 2)."""
        grads = self.mesh.basis_gradients
        return np.einsum("tk,tkd->td", self.values[self.mesh.triangles], grads)

    def on(self, mesh: TriMesh) -> ScalarFieldP1:
        """Same nodal values on a mesh with identical connectivity."""
        if mesh.n_vertices != self.mesh.n_vertices:
            raise MeshMismatchError("meshes have different vertex counts")
        return ScalarFieldP1(mesh, self.values)

    def sample(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values (m,) and element gradients (m, 2) at arbitrary points.

        Raises:
            MeshMismatchError: If a point lies outside the mesh.
        """
        elements, bary = locate_points(self.mesh, points)
        if np.any(elements < 0):
            raise MeshMismatchError(
                f"{int(np.sum(elements < 0))} points lie outside the field's mesh"
            )
        tri_values = self.values[self.mesh.triangles[elements]]
        values = np.einsum("mk,mk->m", bary, tri_values)
        grads = np.einsum("mk,mkd->md", tri_values, self.mesh.basis_gradients[elements])
        return values, grads

    def transfer(self, mesh: TriMesh) -> ScalarFieldP1:
        """Nodal interpolant on another triangulation of the same domain."""
        if same_geometry(mesh, self.mesh):
            return ScalarFieldP1(mesh, self.values)
        values, _ = self.sample(mesh.vertices)
        return ScalarFieldP1(mesh, values)

    def require_mesh(self, mesh: TriMesh, name: str = "field") -> None:
        if self.mesh is not mesh:
            raise MeshMismatchError(f"{name} is defined on a different mesh")


@dataclass(frozen=True, eq=False)
class VectorFieldP1:
    """Nodal 2-vectors of a continuous piecewise-linear vector field."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_vertices, 2):
            raise MeshMismatchError(
                f"vector field has shape {values.shape}, "
                f"expected ({self.mesh.n_vertices}, 2)"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, mesh: TriMesh) -> VectorFieldP1:
        return cls(mesh, np.zeros((mesh.n_vertices, 2)))

    @classmethod
    def interpolate(cls, mesh: TriMesh, func) -> VectorFieldP1:
        """Nodal interpolant of ``func(points) -> (n, 2)``."""
        return cls(mesh, np.asarray(func(mesh.vertices), dtype=float))

    def projected(self) -> VectorFieldP1:
        """Copy with every boundary vertex set to the zero vector."""
        values = np.array(self.values)
        values[self.mesh.boundary] = 0.0
        return VectorFieldP1(self.mesh, values)

    def element_jacobians(self) -> np.ndarray:
        """Constant Jacobian (dX)_ij = d_j X_i per triangle, shape (nt, 2, 2)."""
        grads = self.mesh.basis_gradients
        return np.einsum("tki,tkj->tij", self.values[self.mesh.triangles], grads)

    def sup_norm(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def on(self, mesh: TriMesh) -> VectorFieldP1:
        if mesh.n_vertices != self.mesh.n_vertices:
            raise MeshMismatchError("meshes have different vertex counts")
        return VectorFieldP1(mesh, self.values)

    def __add__(self, other: VectorFieldP1) -> VectorFieldP1:
        return VectorFieldP1(self.mesh, self.values + other.values)

    def __mul__(self, scale: float) -> VectorFieldP1:
        return VectorFieldP1(self.mesh, scale * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> VectorFieldP1:
        return VectorFieldP1(self.mesh, -self.values)
