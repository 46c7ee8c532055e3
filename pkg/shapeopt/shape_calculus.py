"""Distributed shape-derivative tensors, volume and boundary expressions."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np
from scipy import sparse

from .exceptions import (
    InvalidDeformationError,
    MeshMismatchError,
    UnsupportedTensorsError,
)
from .fem import (
    DEFAULT_CG_TOL,
    ProblemData,
    TrackingQuadrature,
    TransmissionSolver,
)
from .fields import ScalarFieldP1, VectorFieldP1
from .mesh import (
    InterfaceEdge,
    Label,
    TriMesh,
    barycentric_in,
    deform,
    interface_edges,
    validate,
)
from .quadrature import Quadrature, midpoint_quadrature

logger = logging.getLogger(__name__)

# Two-point Gauss rule on [0, 1].
EDGE_GAUSS_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
EDGE_GAUSS_WEIGHTS = np.array([0.5, 0.5])


class DerivativeKind(Enum):
    VOL = "vol"
    BD1 = "bd1"
    BD2 = "bd2"
    FD = "fd"


@dataclass(frozen=True)
class DirectionalDerivative:
    value: float
    kind: DerivativeKind

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"{self.kind.value} derivative is not finite")


class TensorSampler(Protocol):
    def __call__(
        self, elements: np.ndarray, points: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]: ...


class _ConstantSampler:
    """S1 and S0 constant on every element."""

    def __init__(self, s1: np.ndarray, s0: np.ndarray):
        self.s1 = s1
        self.s0 = s0

    def __call__(self, elements, points):
        return self.s1[elements], self.s0[elements]


class _TransmissionSampler:
    """Evaluates the transmission tensors anywhere inside a given element.

    u_d is read from its own mesh at the requested points.
    """

    def __init__(
        self,
        mesh: TriMesh,
        beta: np.ndarray,
        grad_u: np.ndarray,
        grad_p: np.ndarray,
        grad_f: np.ndarray,
        nodal: dict[str, np.ndarray],
        u_d: ScalarFieldP1 | None,
    ):
        self.mesh = mesh
        self.beta = beta
        self.grad_u = grad_u
        self.grad_p = grad_p
        self.grad_f = grad_f
        self.nodal = nodal
        self.u_d = u_d

    def __call__(self, elements, points):
        elements = np.asarray(elements)
        points = np.asarray(points, dtype=float)
        bary = barycentric_in(self.mesh, elements, points)
        tri = self.mesh.triangles[elements]
        u, p, f = (
            np.einsum("mk,mk->m", bary, self.nodal[name][tri]) for name in ("u", "p", "f")
        )
        if self.u_d is None:
            ud, grad_ud = np.zeros(len(elements)), np.zeros((len(elements), 2))
        else:
            ud, grad_ud = self.u_d.sample(points)
        return _tensor_formula(
            self.beta[elements],
            self.grad_u[elements],
            self.grad_p[elements],
            grad_ud,
            self.grad_f[elements],
            u,
            p,
            ud,
            f,
        )


def _tensor_formula(beta, grad_u, grad_p, grad_ud, grad_f, u, p, ud, f):
    """S1 = -b(gu x gp + gp x gu) + I(b gu.gp - f p + (u-ud)^2), S0 = -p gf - 2(u-ud) gud."""
    outer = np.einsum("mi,mj->mij", grad_u, grad_p)
    dot = np.einsum("mi,mi->m", grad_u, grad_p)
    diag = beta * dot - f * p + (u - ud) ** 2
    s1 = -beta[:, None, None] * (outer + np.swapaxes(outer, 1, 2))
    s1 = s1 + diag[:, None, None] * np.eye(2)
    s0 = -p[:, None] * grad_f - 2.0 * (u - ud)[:, None] * grad_ud
    return s1, s0


@dataclass(frozen=True, eq=False)
class ShapeTensors:
    """S1 and S0 sampled at the points of a quadrature on the mesh."""

    quadrature: Quadrature
    S1: np.ndarray  # (m, 2, 2)
    S0: np.ndarray  # (m, 2)
    sampler: TensorSampler
    piecewise_constant: bool = False

    @property
    def mesh(self) -> TriMesh:
        return self.quadrature.mesh

    @property
    def points(self) -> np.ndarray:
        return self.quadrature.points

    @property
    def weights(self) -> np.ndarray:
        return self.quadrature.weights

    def scaled(self, factor: float) -> ShapeTensors:
        return ShapeTensors(
            self.quadrature,
            self.S1 * factor,
            self.S0 * factor,
            lambda elements, pts: tuple(
                factor * part for part in self.sampler(elements, pts)
            ),
            self.piecewise_constant,
        )

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Quadrature data: x, w, S1, S0."""
        return self.points, self.weights, self.S1, self.S0


def assemble_tensors(
    mesh: TriMesh,
    u_h: ScalarFieldP1,
    p_h: ScalarFieldP1,
    data: ProblemData,
    tracking: TrackingQuadrature | None = None,
) -> ShapeTensors:
    """Shape-derivative tensors of the tracking functional from state and adjoint.

    The tensors are sampled on the tracking quadrature, so the volume
    expression is the exact derivative of the discrete cost against a target
    fixed in space.
    """
    u_h.require_mesh(mesh, "state")
    p_h.require_mesh(mesh, "adjoint")
    tracking = data.tracking(mesh) if tracking is None else tracking
    quad = tracking.quadrature

    beta = data.coefficient(mesh)
    grad_u = u_h.element_gradients()
    grad_p = p_h.element_gradients()
    grad_f = data.source_gradients(mesh)
    f_nodal = data.source_values(mesh)
    e = quad.elements
    s1, s0 = _tensor_formula(
        beta[e],
        grad_u[e],
        grad_p[e],
        tracking.target_gradients,
        grad_f[e],
        quad.values(u_h.values),
        quad.values(p_h.values),
        tracking.target,
        quad.values(f_nodal),
    )
    sampler = _TransmissionSampler(
        mesh,
        beta=beta,
        grad_u=grad_u,
        grad_p=grad_p,
        grad_f=grad_f,
        nodal={"u": u_h.values, "p": p_h.values, "f": f_nodal},
        u_d=data.u_d,
    )
    return ShapeTensors(quad, s1, s0, sampler)


def simple_tensors(mesh: TriMesh, f1: float, f2: float) -> ShapeTensors:
    """Tensors of J = int f_Omega with f_Omega = f1 on PLUS and f2 on MINUS."""
    f_omega = np.where(mesh.labels == Label.PLUS, float(f1), float(f2))
    s1_elem = f_omega[:, None, None] * np.eye(2)
    s0_elem = np.zeros((mesh.n_triangles, 2))
    quad = midpoint_quadrature(mesh)
    return ShapeTensors(
        quad,
        s1_elem[quad.elements],
        s0_elem[quad.elements],
        _ConstantSampler(s1_elem, s0_elem),
        piecewise_constant=True,
    )


def _require_same_mesh(tensors: ShapeTensors, X: VectorFieldP1) -> None:
    if X.mesh.n_vertices != tensors.mesh.n_vertices:
        raise MeshMismatchError("direction and tensors live on different meshes")


def dJ_vol(tensors: ShapeTensors, X: VectorFieldP1) -> float:
    """Volume expression sum_q w_q (S1 : dX + S0 . X)."""
    _require_same_mesh(tensors, X)
    quad = tensors.quadrature
    X = X.on(tensors.mesh)
    jac = X.element_jacobians()[quad.elements]
    x_at_q = np.einsum("mk,mki->mi", quad.barycentric, X.values[quad.corners])
    integrand = np.einsum("mij,mij->m", tensors.S1, jac) + np.einsum(
        "mi,mi->m", tensors.S0, x_at_q
    )
    return quad.integrate(integrand)


def _edge_trace_data(
    mesh: TriMesh, edges: list[InterfaceEdge]
) -> tuple[np.ndarray, ...]:
    ends = np.array([e.endpoints for e in edges])
    normals = np.array([e.normal for e in edges])
    lengths = np.array([e.length for e in edges])
    plus = np.array([e.plus_element for e in edges])
    minus = np.array([e.minus_element for e in edges])
    return ends, normals, lengths, plus, minus


def dJ_bd(
    tensors: ShapeTensors,
    interface: list[InterfaceEdge],
    X: VectorFieldP1,
    kind: DerivativeKind | str = DerivativeKind.BD2,
) -> float:
    """Boundary expressions on the interface with jump PLUS minus MINUS.

    BD1 integrates [S1 nu . nu](X . nu), BD2 integrates [S1 nu] . X, with nu
    pointing from PLUS into MINUS and 2-point Gauss quadrature per edge.
    """
    kind = DerivativeKind(kind)
    if kind not in (DerivativeKind.BD1, DerivativeKind.BD2):
        raise ValueError(f"boundary expression kind must be bd1 or bd2, got {kind.value}")
    _require_same_mesh(tensors, X)
    if not interface:
        logger.warning("Empty interface: boundary expression is zero")
        return 0.0

    mesh = tensors.mesh
    ends, normals, lengths, plus, minus = _edge_trace_data(mesh, interface)
    pa, pb = mesh.vertices[ends[:, 0]], mesh.vertices[ends[:, 1]]
    xa, xb = X.values[ends[:, 0]], X.values[ends[:, 1]]

    total = np.zeros(len(interface))
    for s, w in zip(EDGE_GAUSS_POINTS, EDGE_GAUSS_WEIGHTS, strict=True):
        pts = (1 - s) * pa + s * pb
        x_val = (1 - s) * xa + s * xb
        s1_plus, _ = tensors.sampler(plus, pts)
        s1_minus, _ = tensors.sampler(minus, pts)
        jump = np.einsum("mij,mj->mi", s1_plus - s1_minus, normals)
        if kind is DerivativeKind.BD1:
            integrand = np.einsum("mi,mi->m", jump, normals) * np.einsum(
                "mi,mi->m", x_val, normals
            )
        else:
            integrand = np.einsum("mi,mi->m", jump, x_val)
        total += w * lengths * integrand
    return float(np.sum(total))


def ibp_identity_check(
    tensors: ShapeTensors, mesh: TriMesh, X: VectorFieldP1
) -> float:
    """Residual of the element-wise integration by parts for constant tensors.

    For S1 constant per element and S0 = 0 the volume expression equals the sum
    of edge jumps: BD2 on the interface, jumps on the remaining interior edges,
    and the outer trace on the boundary of D (zero when X vanishes there).
    """
    if not tensors.piecewise_constant or np.any(tensors.S0 != 0.0):
        raise UnsupportedTensorsError(
            "integration-by-parts check requires piecewise-constant S1 and S0 = 0"
        )
    _require_same_mesh(tensors, X)
    s1, _ = tensors.sampler(np.arange(mesh.n_triangles), mesh.centroids)
    volume = dJ_vol(tensors, X)
    boundary2 = dJ_bd(tensors, interface_edges(mesh), X, DerivativeKind.BD2)

    topo = mesh.topology
    left, right = topo.edge_elements[:, 0], topo.edge_elements[:, 1]
    a, b = topo.edges[:, 0], topo.edges[:, 1]
    tangent = mesh.vertices[b] - mesh.vertices[a]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])  # length-scaled
    toward_left = np.einsum("ei,ei->e", normal, mesh.centroids[left] - mesh.vertices[a])
    normal[toward_left > 0] *= -1.0  # now points out of the left element
    x_mean = 0.5 * (X.values[a] + X.values[b])

    interior = right >= 0
    mixed = np.zeros(len(left), dtype=bool)
    mixed[interior] = mesh.labels[left[interior]] != mesh.labels[right[interior]]
    same = interior & ~mixed
    jump = s1[left[same]] - s1[right[same]]
    interior_sum = np.einsum(
        "eij,ej,ei->e", jump, normal[same], x_mean[same]
    ).sum()
    outer = ~interior
    outer_sum = np.einsum(
        "eij,ej,ei->e", s1[left[outer]], normal[outer], x_mean[outer]
    ).sum()
    return float(abs(volume - (boundary2 + interior_sum + outer_sum)))


@dataclass(frozen=True)
class ConservationReport:
    max_residual: float
    passed: bool


def conservation_check(tensors: ShapeTensors, tol: float = 1e-12) -> ConservationReport:
    """Element-wise residual of -div S1 + S0 for piecewise-constant tensors."""
    if not tensors.piecewise_constant:
        raise UnsupportedTensorsError(
            "conservation check is only available for piecewise-constant tensors"
        )
    # div S1 vanishes inside every element.
    residual = float(np.max(np.abs(tensors.S0), initial=0.0))
    return ConservationReport(residual, residual <= tol)


# --------------------------------------------------------------------------
# Finite-difference oracle
# --------------------------------------------------------------------------


class ShapeFunctional(Protocol):
    def evaluate(self, mesh: TriMesh) -> float: ...


class GeometricFunctional:
    """J = f1 |PLUS| + f2 |MINUS| on a labeled mesh."""

    def __init__(self, f1: float, f2: float):
        self.f1 = f1
        self.f2 = f2

    def evaluate(self, mesh: TriMesh) -> float:
        return geometric_cost(mesh, self.f1, self.f2)


def geometric_cost(mesh: TriMesh, f1: float, f2: float) -> float:
    f_omega = np.where(mesh.labels == Label.PLUS, f1, f2)
    return float(np.sum(f_omega * mesh.signed_areas))


class TrackingFunctional:
    """Tracking cost on transported meshes against a target fixed in space.

    Each evaluation solves the state on the given mesh and integrates
    |u_h - u_d|^2 over the overlay with the mesh of ``data.u_d``. The optimiser
    measures its iterates with the same functional.
    """

    def __init__(self, data: ProblemData, cg_tol: float = DEFAULT_CG_TOL):
        if data.u_d is None:
            raise ValueError("tracking functional requires a target field")
        self.data = data
        self.cg_tol = cg_tol

    def evaluate(self, mesh: TriMesh) -> float:
        solver = TransmissionSolver(mesh, self.data, self.cg_tol)
        return solver.cost(solver.state())


def random_direction(mesh: TriMesh, rng: np.random.Generator) -> VectorFieldP1:
    """Seeded uniform(-1, 1) nodal vectors, zero on the boundary, smoothed once.

    The smoothing replaces every value by the mean over the vertex and its edge
    neighbours.
    """
    values = rng.uniform(-1.0, 1.0, size=(mesh.n_vertices, 2))
    values[mesh.boundary] = 0.0
    edges = mesh.topology.edges
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    adjacency = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    smoothed = (adjacency @ values) / degree[:, None]
    smoothed[mesh.boundary] = 0.0
    return VectorFieldP1(mesh, smoothed)


def fd_oracle(
    problem: ShapeFunctional | ProblemData,
    mesh: TriMesh,
    X: VectorFieldP1,
    t: float,
    cg_tol: float = DEFAULT_CG_TOL,
) -> float:
    """Central difference [J((id+tX)mesh) - J((id-tX)mesh)] / 2t.

    Labels are transported with the mesh. A ``ProblemData`` is wrapped in a
    :class:`TrackingFunctional` whose target stays fixed in space.

    Raises:
        InvalidDeformationError: If either deformed mesh is invalid.
    """
    if isinstance(problem, ProblemData):
        problem = TrackingFunctional(problem, cg_tol)
    forward = deform(mesh, X, t)
    backward = deform(mesh, X, -t)
    for sign, deformed in (("+", forward), ("-", backward)):
        report = validate(deformed)
        if not report.valid:
            raise InvalidDeformationError(
                f"deformed mesh (id {sign} tX) with t={t} is invalid "
                f"(min area {report.min_signed_area:.3e}, "
                f"min angle {report.min_angle:.2f} deg); use a smaller t",
                t=t,
                report=report,
            )
    return (problem.evaluate(forward) - problem.evaluate(backward)) / (2.0 * t)


def derivative_report(
    tensors: ShapeTensors,
    X: VectorFieldP1,
    fd: float | None = None,
) -> list[DirectionalDerivative]:
    """VOL, BD1 and BD2 (and FD when given) for one direction."""
    edges = interface_edges(tensors.mesh)
    report = [
        DirectionalDerivative(dJ_vol(tensors, X), DerivativeKind.VOL),
        DirectionalDerivative(dJ_bd(tensors, edges, X, "bd1"), DerivativeKind.BD1),
        DirectionalDerivative(dJ_bd(tensors, edges, X, "bd2"), DerivativeKind.BD2),
    ]
    if fd is not None:
        report.append(DirectionalDerivative(fd, DerivativeKind.FD))
    return report
