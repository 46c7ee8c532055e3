"""Descent directions from shape tensors under RKHS, H1 and Euclidean metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import ConfigError
from .fem import (
    DEFAULT_CG_TOL,
    cg_solve,
    free_vertices,
    mass_matrix,
    restrict_to_free,
    stiffness_matrix,
)
from .fields import VectorFieldP1
from .kernels import (
    KernelProfile,
    RadialKernel,
    finite_dim_gradient,
    gram_matrix,
    rkhs_gradient_many,
)
from .mesh import TriMesh
from .shape_calculus import ShapeTensors, dJ_vol

logger = logging.getLogger(__name__)


class GradientKind(Enum):
    RKHS_GAUSS = "rkhs_gauss"
    RKHS_WENDLAND = "rkhs_wendland"
    H1 = "h1"
    EUCLIDEAN = "euclidean"

    @property
    def is_rkhs(self) -> bool:
        return self in (GradientKind.RKHS_GAUSS, GradientKind.RKHS_WENDLAND)

    @classmethod
    def parse(cls, value: str | GradientKind) -> GradientKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            options = ", ".join(kind.value for kind in cls)
            raise ConfigError(
                f"unknown gradient method '{value}'; valid options: {options}",
                key="method",
            ) from None


_PROFILE_OF = {
    GradientKind.RKHS_GAUSS: KernelProfile.GAUSS,
    GradientKind.RKHS_WENDLAND: KernelProfile.WENDLAND,
}


@dataclass(frozen=True)
class GradientMethod:
    kind: GradientKind
    sigma: float | None = None
    h1_seminorm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", GradientKind.parse(self.kind))
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}", key="sigma0")

    def kernel(self) -> RadialKernel:
        if not self.kind.is_rkhs:
            raise ConfigError(f"{self.kind.value} has no kernel", key="method")
        if self.sigma is None:
            raise ConfigError(f"{self.kind.value} requires sigma", key="sigma0")
        return RadialKernel(_PROFILE_OF[self.kind], self.sigma)

    def with_sigma(self, sigma: float) -> GradientMethod:
        return GradientMethod(self.kind, sigma, self.h1_seminorm)


def hat_functional(tensors: ShapeTensors) -> np.ndarray:
    """dJ_vol(phi_i e_c) for every vertex i and component c, shape (nv, 2)."""
    quad = tensors.quadrature
    mesh = tensors.mesh
    grads = mesh.basis_gradients[quad.elements]
    w = quad.weights
    s1_part = np.einsum("m,mcb,mkb->mkc", w, tensors.S1, grads)
    s0_part = np.einsum("m,mc,mk->mkc", w, tensors.S0, quad.barycentric)
    local = s1_part + s0_part
    idx = quad.corners.ravel()
    return np.column_stack(
        [
            np.bincount(idx, weights=local[..., c].ravel(), minlength=mesh.n_vertices)
            for c in range(2)
        ]
    )


def rkhs_gradient_field(
    mesh: TriMesh, tensors: ShapeTensors, kernel: RadialKernel
) -> VectorFieldP1:
    """Closed-form RKHS gradient at every vertex, zeroed on the boundary."""
    values = rkhs_gradient_many(tensors, kernel, mesh.vertices)
    return VectorFieldP1(mesh, values).projected()


def euclidean_gradient_field(mesh: TriMesh, tensors: ShapeTensors) -> VectorFieldP1:
    """Coefficients dJ_vol(phi_i e_c) of the hat basis, zeroed on the boundary."""
    return VectorFieldP1(mesh, hat_functional(tensors)).projected()


def h1_matrix(mesh: TriMesh, seminorm: bool = False):
    matrix = stiffness_matrix(mesh)
    return matrix if seminorm else matrix + mass_matrix(mesh)


def h1_inner(mesh: TriMesh, V: VectorFieldP1, X: VectorFieldP1, seminorm: bool = False) -> float:
    """int dV : dX (+ V . X) for P1 vector fields."""
    matrix = h1_matrix(mesh, seminorm)
    return float(sum(V.values[:, c] @ (matrix @ X.values[:, c]) for c in range(2)))


def h1_gradient_field(
    mesh: TriMesh,
    tensors: ShapeTensors,
    seminorm: bool = False,
    cg_tol: float = DEFAULT_CG_TOL,
) -> VectorFieldP1:
    """Riesz representative of dJ_vol in H1_0, component by component."""
    system = restrict_to_free(h1_matrix(mesh, seminorm), free_vertices(mesh))
    rhs = hat_functional(tensors)
    values = np.zeros((mesh.n_vertices, 2))
    for c in range(2):
        reduced = cg_solve(system, system.restrict(rhs[:, c]), tol=cg_tol)
        values[:, c] = system.extend(reduced)
    return VectorFieldP1(mesh, values)


def finite_dim_gradient_field(
    mesh: TriMesh, tensors: ShapeTensors, kernel: RadialKernel, centers: np.ndarray
) -> VectorFieldP1:
    """Gradient in the span of kernel sections at ``centers``.

    The functional values dJ(K(., z_k) e_i) equal the closed-form gradient at
    the centers, so the result interpolates it there.
    """
    gram = gram_matrix(kernel, centers)
    functional = rkhs_gradient_many(tensors, kernel, gram.centers)
    alpha = finite_dim_gradient(gram, functional)
    return VectorFieldP1(mesh, gram.evaluate(alpha, mesh.vertices)).projected()


def gradient_field(
    method: GradientMethod,
    mesh: TriMesh,
    tensors: ShapeTensors,
    cg_tol: float = DEFAULT_CG_TOL,
) -> VectorFieldP1:
    """Dispatch on the gradient kind."""
    if method.kind.is_rkhs:
        return rkhs_gradient_field(mesh, tensors, method.kernel())
    if method.kind is GradientKind.H1:
        return h1_gradient_field(mesh, tensors, method.h1_seminorm, cg_tol)
    return euclidean_gradient_field(mesh, tensors)


def descent_value(tensors: ShapeTensors, field: VectorFieldP1) -> float:
    """dJ_vol(-field); negative for a descent direction."""
    return dJ_vol(tensors, -field)


def field_spread(field: VectorFieldP1, mask: np.ndarray | None = None) -> float:
    """Largest component range of the selected vectors relative to their mean norm."""
    mask = ~field.mesh.boundary if mask is None else mask
    vectors = field.values[mask]
    if len(vectors) == 0:
        return 0.0
    mean_norm = float(np.linalg.norm(vectors.mean(axis=0)))
    spread = float(np.max(vectors.max(axis=0) - vectors.min(axis=0)))
    return spread / mean_norm if mean_norm > 0 else float("inf")
