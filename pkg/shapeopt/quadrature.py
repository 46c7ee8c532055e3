"""Element quadrature on one triangulation and on the overlay of two."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import MeshMismatchError
from .mesh import TriMesh, barycentric_in, same_geometry

logger = logging.getLogger(__name__)

# Edge-midpoint rule: exact for quadratics, weights area/3.
MIDPOINT_BARYCENTRIC = np.array(
    [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]]
)

COVERAGE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Weighted points, each given by an element of ``mesh`` and barycentrics in it."""

    mesh: TriMesh
    elements: np.ndarray  # (m,)
    barycentric: np.ndarray  # (m, 3)
    weights: np.ndarray  # (m,)

    def __len__(self) -> int:
        return len(self.elements)

    @cached_property
    def points(self) -> np.ndarray:
        corners = self.mesh.vertices[self.mesh.triangles[self.elements]]
        return np.einsum("mk,mkd->md", self.barycentric, corners)

    @cached_property
    def corners(self) -> np.ndarray:
        """Vertex indices of the element holding each point, shape (m, 3)."""
        return self.mesh.triangles[self.elements]

    def values(self, nodal: np.ndarray) -> np.ndarray:
        """P1 interpolant of nodal values at the points."""
        return np.einsum("mk,mk->m", self.barycentric, np.asarray(nodal)[self.corners])

    def gradients(self, nodal: np.ndarray) -> np.ndarray:
        """Element gradient of the P1 interpolant at every point, shape (m, 2)."""
        grads = self.mesh.basis_gradients[self.elements]
        return np.einsum("mk,mkd->md", np.asarray(nodal)[self.corners], grads)

    def integrate(self, integrand: np.ndarray) -> float:
        return float(self.weights @ integrand)

    def scatter(self, integrand: np.ndarray) -> np.ndarray:
        """sum_q w_q g(x_q) phi_i(x_q) for every vertex i."""
        local = (self.weights * integrand)[:, None] * self.barycentric
        return np.bincount(
            self.corners.ravel(), weights=local.ravel(), minlength=self.mesh.n_vertices
        )


def midpoint_quadrature(mesh: TriMesh) -> Quadrature:
    nt = mesh.n_triangles
    return Quadrature(
        mesh,
        np.repeat(np.arange(nt), 3),
        np.tile(MIDPOINT_BARYCENTRIC, (nt, 1)),
        np.repeat(mesh.signed_areas / 3.0, 3),
    )


@dataclass(frozen=True, eq=False)
class Overlay:
    """Common refinement of two triangulations of the unit square.

    ``on_mesh`` and ``on_reference`` hold the same points and weights, located
    in the elements of either triangulation.
    """

    on_mesh: Quadrature
    on_reference: Quadrature


def _reach(mesh: TriMesh) -> np.ndarray:
    corners = mesh.vertices[mesh.triangles]
    return np.linalg.norm(corners - mesh.centroids[:, None], axis=2).max(axis=1)


def _candidate_pairs(mesh: TriMesh, reference: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Element pairs whose circumscribing centroid discs intersect."""
    r_mesh, r_ref = _reach(mesh), _reach(reference)
    neighbours = reference.centroid_tree.query_ball_point(
        mesh.centroids, float(r_mesh.max() + r_ref.max())
    )
    counts = np.fromiter((len(n) for n in neighbours), dtype=np.int64, count=len(neighbours))
    moved = np.repeat(np.arange(mesh.n_triangles), counts)
    fixed = np.fromiter(
        itertools.chain.from_iterable(neighbours), dtype=np.int64, count=int(counts.sum())
    )
    gap = np.linalg.norm(mesh.centroids[moved] - reference.centroids[fixed], axis=1)
    close = gap <= r_mesh[moved] + r_ref[fixed]
    return moved[close], fixed[close]


def _clip_left(poly: np.ndarray, count: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Sutherland-Hodgman clip of convex polygons to the left of a -> b."""
    n_poly, max_vertices = poly.shape[:2]
    rows = np.arange(n_poly)
    edge = b - a
    rel = poly - a[:, None, :]
    side = edge[:, None, 0] * rel[..., 1] - edge[:, None, 1] * rel[..., 0]
    out = np.zeros((n_poly, max_vertices + 1, 2))
    n_out = np.zeros(n_poly, dtype=np.int64)
    wrap = np.maximum(count, 1)
    for i in range(max_vertices):
        active = i < count
        if not active.any():
            break
        prev = (i - 1) % wrap
        cur, prv = poly[:, i], poly[rows, prev]
        s_cur, s_prv = side[:, i], side[rows, prev]
        cur_in, prv_in = s_cur >= 0, s_prv >= 0
        crossing = active & (cur_in != prv_in)
        denom = np.where(crossing, s_prv - s_cur, 1.0)
        frac = np.where(crossing, s_prv / denom, 0.0)
        hit = prv + frac[:, None] * (cur - prv)
        out[rows[crossing], n_out[crossing]] = hit[crossing]
        n_out += crossing
        keep = active & cur_in
        out[rows[keep], n_out[keep]] = cur[keep]
        n_out += keep
    return out, n_out


def overlay_quadrature(mesh: TriMesh, reference: TriMesh) -> Overlay:
    """Midpoint rule on the fan triangulation of every element intersection.

    The rule is exact for any product of two P1 functions on the two meshes.
    Identical meshes short-cut to the plain midpoint rule.

    Raises:
        MeshMismatchError: If the pieces do not cover the domain of both meshes.
    """
    if same_geometry(mesh, reference):
        return Overlay(midpoint_quadrature(mesh), midpoint_quadrature(reference))

    moved, fixed = _candidate_pairs(mesh, reference)
    poly = mesh.vertices[mesh.triangles[moved]]
    count = np.full(len(moved), 3)
    clip = reference.vertices[reference.triangles[fixed]]
    for k in range(3):
        poly, count = _clip_left(poly, count, clip[:, k], clip[:, (k + 1) % 3])

    pieces, areas, owners, hosts = [], [], [], []
    for k in range(1, poly.shape[1] - 1):
        p0, p1, p2 = poly[:, 0], poly[:, k], poly[:, k + 1]
        area = 0.5 * (
            (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
        )
        keep = (count > k + 1) & (area > 0)
        pieces.append(np.stack([p0[keep], p1[keep], p2[keep]], axis=1))
        areas.append(area[keep])
        owners.append(moved[keep])
        hosts.append(fixed[keep])
    pieces = np.concatenate(pieces)
    areas = np.concatenate(areas)

    covered = float(areas.sum())
    domain = float(reference.signed_areas.sum())
    if abs(covered - domain) > COVERAGE_TOL * max(domain, 1.0) or abs(
        float(mesh.signed_areas.sum()) - domain
    ) > COVERAGE_TOL * max(domain, 1.0):
        raise MeshMismatchError(
            f"overlay covers {covered:.12g} of {domain:.12g}; "
            f"the meshes do not triangulate the same domain"
        )

    points = np.einsum("qk,pkd->pqd", MIDPOINT_BARYCENTRIC, pieces).reshape(-1, 2)
    weights = np.repeat(areas / 3.0, 3)
    elements = np.repeat(np.concatenate(owners), 3)
    ref_elements = np.repeat(np.concatenate(hosts), 3)
    logger.debug(f"Overlay: {len(areas)} pieces from {len(moved)} element pairs")
    return Overlay(
        Quadrature(mesh, elements, barycentric_in(mesh, elements, points), weights),
        Quadrature(
            reference, ref_elements, barycentric_in(reference, ref_elements, points), weights
        ),
    )
