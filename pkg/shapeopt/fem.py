"""P1 finite elements for the two-phase transmission problem."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

import numpy as np
from scipy import sparse

from .exceptions import InvalidMeshError, MeshMismatchError, SolverError
from .fields import ScalarFieldP1
from .mesh import Label, ShapeSpec, TriMesh, generate_mesh, same_geometry, validate
from .quadrature import (
    MIDPOINT_BARYCENTRIC,
    Quadrature,
    midpoint_quadrature,
    overlay_quadrature,
)

logger = logging.getLogger(__name__)

DEFAULT_CG_TOL = 1e-10

_MASS_REFERENCE = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True)
class ProblemData:
    """Coefficients, source and target of the transmission problem.

    The target ``u_d`` is a P1 function on its own mesh and stays fixed in
    space: on any other triangulation it is sampled, never transported.
    """

    beta_plus: float = 1.0
    beta_minus: float = 0.5
    f: float | ScalarFieldP1 = 1.0
    u_d: ScalarFieldP1 | None = None

    def __post_init__(self):
        if not (self.beta_plus > 0 and self.beta_minus > 0):
            raise ValueError(
                f"conductivities must be positive, got "
                f"beta_plus={self.beta_plus}, beta_minus={self.beta_minus}"
            )

    def with_target(self, u_d: ScalarFieldP1) -> ProblemData:
        return replace(self, u_d=u_d)

    def coefficient(self, mesh: TriMesh) -> np.ndarray:
        """Per-element conductivity beta_chi."""
        return np.where(mesh.labels == Label.PLUS, self.beta_plus, self.beta_minus)

    def source_values(self, mesh: TriMesh) -> np.ndarray:
        if isinstance(self.f, ScalarFieldP1):
            return self.f.values
        return np.full(mesh.n_vertices, float(self.f))

    def source_gradients(self, mesh: TriMesh) -> np.ndarray:
        if isinstance(self.f, ScalarFieldP1):
            return self.f.on(mesh).element_gradients()
        return np.zeros((mesh.n_triangles, 2))

    def target(self, mesh: TriMesh) -> ScalarFieldP1:
        """Nodal interpolant of u_d on ``mesh``."""
        if self.u_d is None:
            return ScalarFieldP1.zeros(mesh)
        return self.u_d.transfer(mesh)

    def tracking(self, mesh: TriMesh) -> TrackingQuadrature:
        return tracking_quadrature(mesh, self.u_d)


@dataclass(frozen=True, eq=False)
class TrackingQuadrature:
    """Quadrature of the tracking term on a mesh, with u_d sampled at its points."""

    quadrature: Quadrature
    target: np.ndarray  # (m,)
    target_gradients: np.ndarray  # (m, 2)

    def residual(self, u_h: ScalarFieldP1) -> np.ndarray:
        """u_h - u_d at the quadrature points."""
        return self.quadrature.values(u_h.values) - self.target

    def cost(self, u_h: ScalarFieldP1) -> float:
        return self.quadrature.integrate(self.residual(u_h) ** 2)


def tracking_quadrature(mesh: TriMesh, u_d: ScalarFieldP1 | None) -> TrackingQuadrature:
    """Overlay of ``mesh`` with the mesh of ``u_d`` (midpoint rule when they coincide)."""
    if u_d is None:
        quad = midpoint_quadrature(mesh)
        return TrackingQuadrature(quad, np.zeros(len(quad)), np.zeros((len(quad), 2)))
    overlay = overlay_quadrature(mesh, u_d.mesh)
    seen = overlay.on_reference
    return TrackingQuadrature(
        overlay.on_mesh, seen.values(u_d.values), seen.gradients(u_d.values)
    )


@dataclass(frozen=True, eq=False)
class SparseSpd:
    """SPD matrix over the free (non-Dirichlet) vertices in CSR layout."""

    matrix: sparse.csr_matrix
    free: np.ndarray
    n_total: int

    @cached_property
    def inverse_diagonal(self) -> np.ndarray:
        return 1.0 / self.matrix.diagonal()

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free]

    def extend(self, reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_total)
        full[self.free] = reduced
        return full

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


def _scatter(mesh: TriMesh, local: np.ndarray) -> sparse.csr_matrix:
    """Sum element matrices (nt, 3, 3) into a global CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(mesh: TriMesh, coefficient: np.ndarray | float = 1.0) -> sparse.csr_matrix:
    """Full P1 stiffness matrix sum_K c_K int_K grad(phi_i).grad(phi_j)."""
    grads = mesh.basis_gradients
    scale = np.broadcast_to(coefficient, (mesh.n_triangles,)) * mesh.signed_areas
    local = scale[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)
    return _scatter(mesh, local)


def mass_matrix(mesh: TriMesh) -> sparse.csr_matrix:
    local = mesh.signed_areas[:, None, None] * _MASS_REFERENCE[None]
    return _scatter(mesh, local)


def free_vertices(mesh: TriMesh) -> np.ndarray:
    return np.flatnonzero(~mesh.boundary)


def restrict_to_free(full: sparse.spmatrix, free: np.ndarray) -> SparseSpd:
    reduced = full.tocsr()[free][:, free].tocsr()
    return SparseSpd(reduced, free, full.shape[0])


def assemble_system(mesh: TriMesh, data: ProblemData) -> SparseSpd:
    """Transmission stiffness matrix with Dirichlet vertices eliminated.

    Raises:
        InvalidMeshError: If the mesh has inverted or degenerate elements.
    """
    report = validate(mesh)
    if not report.min_signed_area > 0:
        raise InvalidMeshError(
            f"refusing to assemble on a mesh with min signed area "
            f"{report.min_signed_area:.3e}",
            report=report,
        )
    full = stiffness_matrix(mesh, data.coefficient(mesh))
    return restrict_to_free(full, free_vertices(mesh))


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual_history: list[float] = field(default_factory=list)


def conjugate_gradients(
    A: Any,
    b: np.ndarray,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> CGResult:
    """Jacobi-preconditioned conjugate gradients.

    Stops when the true residual satisfies ||Ax - b|| <= tol ||b||; the
    recursive residual only triggers a check, after which the iteration
    restarts from the true residual if the check fails.

    Raises:
        SolverError: If ``max_iter`` iterations do not reach the tolerance.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if isinstance(A, SparseSpd):
        inv_diag = A.inverse_diagonal
        A = A.matrix
    else:
        diag = A.diagonal() if sparse.issparse(A) else np.diag(np.asarray(A))
        inv_diag = 1.0 / diag
    max_iter = 10 * max(n, 1) if max_iter is None else max_iter

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return CGResult(np.zeros(n), 0, [0.0])
    target = tol * norm_b

    r = b - A @ x
    history = [float(np.linalg.norm(r)) / norm_b]
    if history[0] * norm_b <= target:
        return CGResult(x, 0, history)
    z = inv_diag * r
    p = z.copy()
    gamma = float(r @ z)

    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = gamma / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            r = b - A @ x
            rnorm = float(np.linalg.norm(r))
            history.append(rnorm / norm_b)
            if rnorm <= target:
                return CGResult(x, it, history)
            z = inv_diag * r
            p = z.copy()
            gamma = float(r @ z)
            continue
        history.append(rnorm / norm_b)
        z = inv_diag * r
        gamma_old, gamma = gamma, float(r @ z)
        p = z + (gamma / gamma_old) * p

    raise SolverError(
        f"CG did not converge in {max_iter} iterations "
        f"(relative residual {history[-1]:.3e}, tolerance {tol:.1e})",
        residual=history[-1],
        residual_history=history,
    )


def cg_solve(
    A: Any,
    b: np.ndarray,
    tol: float = DEFAULT_CG_TOL,
    max_iter: int | None = None,
) -> np.ndarray:
    result = conjugate_gradients(A, b, tol=tol, max_iter=max_iter)
    logger.debug(f"CG converged in {result.iterations} iterations")
    return result.x


def load_vector(mesh: TriMesh, values: np.ndarray) -> np.ndarray:
    """Vector of int g phi_i for a P1 function g given by nodal values."""
    return mass_matrix(mesh) @ values


def solve_state(
    mesh: TriMesh,
    data: ProblemData,
    system: SparseSpd | None = None,
    cg_tol: float = DEFAULT_CG_TOL,
) -> ScalarFieldP1:
    """P1 solution of -div(beta grad u) = f with u = 0 on the boundary."""
    system = assemble_system(mesh, data) if system is None else system
    rhs = load_vector(mesh, data.source_values(mesh))
    reduced = cg_solve(system, system.restrict(rhs), tol=cg_tol)
    return ScalarFieldP1(mesh, system.extend(reduced))


def solve_adjoint(
    mesh: TriMesh,
    data: ProblemData,
    u_h: ScalarFieldP1,
    system: SparseSpd | None = None,
    cg_tol: float = DEFAULT_CG_TOL,
    tracking: TrackingQuadrature | None = None,
) -> ScalarFieldP1:
    """Adjoint p with int beta grad(phi).grad(p) = -int 2 (u - u_d) phi.

    The right-hand side is integrated with the tracking quadrature, so it is
    exact when u_d lives on another mesh.
    """
    u_h.require_mesh(mesh, "state")
    system = assemble_system(mesh, data) if system is None else system
    tracking = data.tracking(mesh) if tracking is None else tracking
    rhs = -2.0 * tracking.quadrature.scatter(tracking.residual(u_h))
    reduced = cg_solve(system, system.restrict(rhs), tol=cg_tol)
    return ScalarFieldP1(mesh, system.extend(reduced))


def cost(mesh: TriMesh, u_h: ScalarFieldP1, u_d: ScalarFieldP1) -> float:
    """Tracking cost int_D |u_h - u_d|^2, exact for P1 fields.

    ``u_d`` may live on another triangulation of D; the integral then runs
    over the overlay of both meshes.
    """
    if u_h.mesh.n_vertices != mesh.n_vertices:
        raise MeshMismatchError("the state must live on the evaluation mesh")
    if not same_geometry(u_d.mesh, mesh):
        return tracking_quadrature(mesh, u_d).cost(u_h)
    error = (u_h.values - u_d.values)[mesh.triangles]
    at_midpoints = error @ MIDPOINT_BARYCENTRIC.T
    return float(np.sum(mesh.signed_areas / 3.0 * np.sum(at_midpoints**2, axis=1)))


def compute_target(
    mesh: TriMesh,
    target_shape: ShapeSpec,
    data: ProblemData,
    cg_tol: float = DEFAULT_CG_TOL,
) -> ScalarFieldP1:
    """State of the target configuration, solved on the given mesh.

    The target phase is read from ``target_shape`` at element centroids.
    """
    inside = target_shape.contains(mesh.centroids)
    target_mesh = mesh.with_labels(np.where(inside, Label.PLUS, Label.MINUS))
    u_d = solve_state(target_mesh, data, cg_tol=cg_tol)
    return ScalarFieldP1(mesh, u_d.values)


def frozen_target(
    target_shape: ShapeSpec,
    data: ProblemData,
    n_interface: int,
    grid_res: int,
    cg_tol: float = DEFAULT_CG_TOL,
) -> ScalarFieldP1:
    """u_d solved once on a mesh fitted to the target shape.

    The result is the fixed-in-space target that every iterate is measured
    against.
    """
    mesh = generate_mesh(target_shape, n_interface, grid_res)
    u_d = compute_target(mesh, target_shape, data, cg_tol)
    logger.info(
        f"Target state on {mesh.n_triangles} elements, max u_d={u_d.values.max():.6e}"
    )
    return u_d


class TransmissionSolver:
    """State and adjoint solves on one mesh sharing one assembled system."""

    def __init__(self, mesh: TriMesh, data: ProblemData, cg_tol: float = DEFAULT_CG_TOL):
        self.mesh = mesh
        self.data = data
        self.cg_tol = cg_tol
        self.system = assemble_system(mesh, data)

    @cached_property
    def tracking(self) -> TrackingQuadrature:
        return self.data.tracking(self.mesh)

    def state(self) -> ScalarFieldP1:
        return solve_state(self.mesh, self.data, self.system, self.cg_tol)

    def adjoint(self, u_h: ScalarFieldP1) -> ScalarFieldP1:
        return solve_adjoint(
            self.mesh, self.data, u_h, self.system, self.cg_tol, tracking=self.tracking
        )

    def cost(self, u_h: ScalarFieldP1) -> float:
        return self.tracking.cost(u_h)
