"""Body-fitted triangulations of the unit square with a two-phase interface."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import Delaunay, cKDTree

from .exceptions import InvalidMeshError, InvalidShapeError, MeshGenerationError

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12
MAX_RECOVERY_ROUNDS = 8
LOCATE_TOL = 1e-10
LOCATE_CANDIDATES = 8

# Edge k of a triangle is opposite to its local vertex k.
_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class Label(IntEnum):
    """Phase of an element."""

    MINUS = 0
    PLUS = 1


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def to_dict(self) -> dict[str, Any]:
        return {"center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Disc:
        cx, cy = data["center"]
        return cls(center=(float(cx), float(cy)), radius=float(data["radius"]))


@dataclass(frozen=True)
class ShapeSpec:
    """Analytic description of the PLUS phase as a union of discs."""

    discs: tuple[Disc, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "discs", tuple(self.discs))

    def validate(self) -> None:
        """Reject discs that are degenerate or reach the boundary of D."""
        for disc in self.discs:
            cx, cy = disc.center
            if not disc.radius > 0:
                raise InvalidShapeError(
                    f"disc radius must be positive, got {disc.radius}", disc=disc
                )
            clearance = min(cx, cy, 1.0 - cx, 1.0 - cy)
            if not clearance > disc.radius:
                raise InvalidShapeError(
                    f"disc at {disc.center} with radius {disc.radius} "
                    f"is not strictly inside the unit square",
                    disc=disc,
                )

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points lying in the closed union of discs."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(points), dtype=bool)
        for disc in self.discs:
            offset = points - np.asarray(disc.center)
            inside |= np.einsum("ij,ij->i", offset, offset) <= disc.radius**2
        return inside

    def union_area(self) -> float:
        """Closed-form area of the union (available for up to two discs)."""
        if len(self.discs) > 2:
            raise ValueError("union area is only available for up to two discs")
        area = sum(math.pi * d.radius**2 for d in self.discs)
        if len(self.discs) == 2:
            area -= _lens_area(*self.discs)
        return area

    def boundary_samples(self, per_disc: int = 720) -> np.ndarray:
        """Points on the boundary of the union (arcs hidden in other discs dropped)."""
        samples = []
        for j, disc in enumerate(self.discs):
            theta = 2 * np.pi * np.arange(per_disc) / per_disc
            pts = np.asarray(disc.center) + disc.radius * np.column_stack(
                [np.cos(theta), np.sin(theta)]
            )
            keep = ~_inside_others(pts, self.discs, j)
            samples.append(pts[keep])
        if not samples:
            return np.zeros((0, 2))
        return np.vstack(samples)

    def to_dict(self) -> list[dict[str, Any]]:
        return [d.to_dict() for d in self.discs]

    @classmethod
    def from_dict(cls, data: list[dict[str, Any]] | None) -> ShapeSpec:
        return cls(tuple(Disc.from_dict(item) for item in data or []))


def _lens_area(a: Disc, b: Disc) -> float:
    """Area of the intersection of two discs."""
    d = math.dist(a.center, b.center)
    ra, rb = a.radius, b.radius
    if d >= ra + rb:
        return 0.0
    if d <= abs(ra - rb):
        return math.pi * min(ra, rb) ** 2
    alpha = math.acos((d * d + ra * ra - rb * rb) / (2 * d * ra))
    beta = math.acos((d * d + rb * rb - ra * ra) / (2 * d * rb))
    # Two circular segments.
    return ra * ra * (alpha - math.sin(2 * alpha) / 2) + rb * rb * (
        beta - math.sin(2 * beta) / 2
    )


def _inside_others(points: np.ndarray, discs: tuple[Disc, ...], j: int) -> np.ndarray:
    """Mask of points strictly inside any disc other than ``discs[j]``."""
    points = np.atleast_2d(points)
    inside = np.zeros(len(points), dtype=bool)
    for k, disc in enumerate(discs):
        if k == j:
            continue
        inside |= np.linalg.norm(points - np.asarray(disc.center), axis=1) < disc.radius
    return inside


@dataclass(frozen=True)
class InterfaceEdge:
    """Edge between a PLUS and a MINUS triangle."""

    endpoints: tuple[int, int]
    normal: tuple[float, float]
    length: float
    plus_element: int
    minus_element: int


@dataclass(frozen=True)
class QualityReport:
    min_signed_area: float
    min_angle: float
    valid: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "min_signed_area": self.min_signed_area,
            "min_angle": self.min_angle,
            "valid": self.valid,
        }


@dataclass(frozen=True)
class EdgeTopology:
    """Unique edges with their (one or two) adjacent triangles."""

    edges: np.ndarray  # (ne, 2), sorted vertex pairs
    edge_elements: np.ndarray  # (ne, 2), -1 where the edge lies on the hull
    element_edges: np.ndarray  # (nt, 3), edge opposite each local vertex


def _edge_topology(triangles: np.ndarray) -> EdgeTopology:
    nt = len(triangles)
    half = np.sort(triangles[:, _LOCAL_EDGES].reshape(-1, 2), axis=1)
    if nt == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return EdgeTopology(empty, empty, np.zeros((0, 3), dtype=np.int64))
    edges, inverse = np.unique(half, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    owner = np.repeat(np.arange(nt), 3)

    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]

    edge_elements = np.full((len(edges), 2), -1, dtype=np.int64)
    edge_elements[sorted_edges[first], 0] = owner[order[first]]
    edge_elements[sorted_edges[~first], 1] = owner[order[~first]]
    return EdgeTopology(edges, edge_elements, inverse.reshape(nt, 3))


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * (
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    )


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of D with per-element phase labels.

    Arrays are made read-only on construction; deformations create new meshes
    sharing connectivity, labels and boundary flags.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    labels: np.ndarray
    boundary: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if len(labels) != len(triangles):
            raise InvalidMeshError("one label per triangle is required")
        if self.boundary is None:
            boundary = np.any(
                (np.abs(vertices) <= BOUNDARY_TOL)
                | (np.abs(vertices - 1.0) <= BOUNDARY_TOL),
                axis=1,
            )
        else:
            boundary = np.asarray(self.boundary, dtype=bool).reshape(-1)
        for name, value in (
            ("vertices", vertices),
            ("triangles", triangles),
            ("labels", labels),
            ("boundary", boundary),
        ):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three barycentric hat functions, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        two_area = 2.0 * self.signed_areas
        grads = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            grads[:, k, 0] = (p[:, i, 1] - p[:, j, 1]) / two_area
            grads[:, k, 1] = (p[:, j, 0] - p[:, i, 0]) / two_area
        return grads

    @cached_property
    def centroid_tree(self) -> cKDTree:
        return cKDTree(self.centroids)

    @cached_property
    def topology(self) -> EdgeTopology:
        return _edge_topology(self.triangles)

    def plus_area(self) -> float:
        return float(self.signed_areas[self.labels == Label.PLUS].sum())

    def with_vertices(self, vertices: np.ndarray) -> TriMesh:
        return TriMesh(vertices, self.triangles, self.labels, self.boundary)

    def with_labels(self, labels: np.ndarray) -> TriMesh:
        return TriMesh(self.vertices, self.triangles, labels, self.boundary)


# --------------------------------------------------------------------------
# Generation
# --------------------------------------------------------------------------


def _circle_crossings(a: Disc, b: Disc) -> list[np.ndarray]:
    ca, cb = np.asarray(a.center), np.asarray(b.center)
    d = float(np.linalg.norm(cb - ca))
    if d == 0.0 or d >= a.radius + b.radius or d <= abs(a.radius - b.radius):
        return []
    along = (d * d + a.radius**2 - b.radius**2) / (2 * d)
    half_chord = math.sqrt(max(a.radius**2 - along**2, 0.0))
    axis = (cb - ca) / d
    perp = np.array([-axis[1], axis[0]])
    base = ca + along * axis
    return [base + half_chord * perp, base - half_chord * perp]


def _angle(disc: Disc, point: np.ndarray) -> float:
    return math.atan2(point[1] - disc.center[1], point[0] - disc.center[0]) % (
        2 * math.pi
    )


@dataclass
class _InterfaceSampling:
    points: np.ndarray
    segments: list[tuple[int, int]]
    exclusion: np.ndarray  # grid clearance radius per interface point
    ring_points: np.ndarray


def _sample_interface(shape: ShapeSpec, n: int, h: float) -> _InterfaceSampling:
    discs = shape.discs
    points: list[np.ndarray] = []
    exclusion: list[float] = []
    on_circle: list[list[tuple[float, int]]] = [[] for _ in discs]
    crossings: list[list[np.ndarray]] = [[] for _ in discs]

    spacing = [2 * math.pi * d.radius / n for d in discs]
    ring_spacing = [min(max(4 * s, s), h) for s in spacing]
    graded = [sr >= 1.5 * s for s, sr in zip(spacing, ring_spacing, strict=True)]
    ring_offset = [
        0.45 * (s + sr) for s, sr in zip(spacing, ring_spacing, strict=True)
    ]
    clearance = [
        off + 0.55 * h if g else 0.5 * (s + h)
        for off, g, s in zip(ring_offset, graded, spacing, strict=True)
    ]

    # Crossing points are shared by both circles.
    for i in range(len(discs)):
        for j in range(i + 1, len(discs)):
            for p in _circle_crossings(discs[i], discs[j]):
                others = tuple(d for k, d in enumerate(discs) if k not in (i, j))
                if others and ShapeSpec(others).contains(p)[0]:
                    continue
                idx = len(points)
                points.append(p)
                exclusion.append(max(clearance[i], clearance[j]))
                on_circle[i].append((_angle(discs[i], p), idx))
                on_circle[j].append((_angle(discs[j], p), idx))
                crossings[i].append(p)
                crossings[j].append(p)

    for j, disc in enumerate(discs):
        theta = 2 * np.pi * np.arange(n) / n
        samples = np.asarray(disc.center) + disc.radius * np.column_stack(
            [np.cos(theta), np.sin(theta)]
        )
        keep = ~_inside_others(samples, discs, j)
        for p, th, kept in zip(samples, theta, keep, strict=True):
            if not kept:
                continue
            if any(np.linalg.norm(p - q) < 0.3 * spacing[j] for q in crossings[j]):
                continue
            on_circle[j].append((float(th), len(points)))
            points.append(p)
            exclusion.append(clearance[j])

    segments: list[tuple[int, int]] = []
    for j, disc in enumerate(discs):
        ordered = sorted(on_circle[j])
        if len(ordered) < 2:
            continue
        for k, (theta_a, ia) in enumerate(ordered):
            theta_b, ib = ordered[(k + 1) % len(ordered)]
            sweep = (theta_b - theta_a) % (2 * math.pi)
            mid = theta_a + 0.5 * sweep
            arc_mid = np.asarray(disc.center) + disc.radius * np.array(
                [math.cos(mid), math.sin(mid)]
            )
            if not _inside_others(arc_mid, discs, j)[0]:
                segments.append((ia, ib))

    ring: list[np.ndarray] = []
    min_ring_gap = min(ring_spacing, default=h)
    for j, disc in enumerate(discs):
        if not graded[j]:
            continue
        offset = ring_offset[j]
        margin = 0.5 * ring_spacing[j]
        for rho in (disc.radius - offset, disc.radius + offset):
            if rho <= 0:
                continue
            m = max(3, round(2 * math.pi * rho / ring_spacing[j]))
            theta = 2 * np.pi * (np.arange(m) + 0.5) / m
            cand = np.asarray(disc.center) + rho * np.column_stack(
                [np.cos(theta), np.sin(theta)]
            )
            gap = np.full(len(cand), np.inf)
            for other in discs:
                dist = np.linalg.norm(cand - np.asarray(other.center), axis=1)
                gap = np.minimum(gap, np.abs(dist - other.radius))
            inside_box = np.all((cand >= margin) & (cand <= 1.0 - margin), axis=1)
            for p in cand[(gap >= 0.8 * offset) & inside_box]:
                if all(np.linalg.norm(p - q) >= 0.5 * min_ring_gap for q in ring):
                    ring.append(p)

    return _InterfaceSampling(
        points=np.asarray(points, dtype=float).reshape(-1, 2),
        segments=segments,
        exclusion=np.asarray(exclusion, dtype=float),
        ring_points=np.asarray(ring, dtype=float).reshape(-1, 2),
    )


def _edge_set(triangles: np.ndarray) -> set[tuple[int, int]]:
    pairs = np.sort(triangles[:, _LOCAL_EDGES].reshape(-1, 2), axis=1)
    return set(map(tuple, pairs.tolist()))


def _label_regions(
    vertices: np.ndarray,
    triangles: np.ndarray,
    segments: list[tuple[int, int]],
    shape: ShapeSpec,
) -> np.ndarray:
    """Flood-fill regions bounded by the interface and vote on their phase."""
    nt = len(triangles)
    if not shape.discs:
        return np.full(nt, Label.MINUS, dtype=np.int8)
    topo = _edge_topology(triangles)
    constrained = {tuple(sorted(s)) for s in segments}
    is_constraint = np.array(
        [tuple(e) in constrained for e in topo.edges.tolist()], dtype=bool
    )
    interior = (topo.edge_elements[:, 1] >= 0) & ~is_constraint
    a, b = topo.edge_elements[interior, 0], topo.edge_elements[interior, 1]
    adjacency = sparse.coo_matrix((np.ones(len(a)), (a, b)), shape=(nt, nt))
    _, region = csgraph.connected_components(adjacency, directed=False)

    areas = np.abs(_signed_areas(vertices, triangles))
    inside = shape.contains(vertices[triangles].mean(axis=1)).astype(float)
    plus_weight = np.bincount(region, weights=inside * areas)
    total = np.bincount(region, weights=areas)
    plus_region = plus_weight > 0.5 * total
    return np.where(plus_region[region], Label.PLUS, Label.MINUS).astype(np.int8)


def generate_mesh(shape: ShapeSpec, n_interface: int, grid_res: int) -> TriMesh:
    """Generate a body-fitted triangulation of the unit square.

    The interface is sampled with ``n_interface`` equidistant points per disc
    (arcs hidden inside other discs are dropped and circle crossings are
    inserted), surrounded by a graded ring of points on each side and embedded
    in a structured background grid of ``grid_res`` points per side.

    Args:
        shape: Union of discs defining the PLUS phase.
        n_interface: Number of interface samples per disc (>= 8).
        grid_res: Background grid points per side (>= 4).

    Returns:
        A valid TriMesh whose edge set contains every interface segment.

    Raises:
        InvalidShapeError: If a disc is not strictly inside the unit square.
        MeshGenerationError: If an interface segment cannot be recovered.
    """
    if n_interface < 8:
        raise ValueError(f"n_interface must be at least 8, got {n_interface}")
    if grid_res < 4:
        raise ValueError(f"grid_res must be at least 4, got {grid_res}")
    shape.validate()

    h = 1.0 / (grid_res - 1)
    axis = np.linspace(0.0, 1.0, grid_res)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    on_boundary = np.any((grid == 0.0) | (grid == 1.0), axis=1)

    sampling = _sample_interface(shape, n_interface, h)
    keep = np.ones(len(grid), dtype=bool)
    if len(sampling.points):
        dist, nearest = cKDTree(sampling.points).query(grid)
        keep &= dist >= sampling.exclusion[nearest]
    if len(sampling.ring_points):
        dist, _ = cKDTree(sampling.ring_points).query(grid)
        keep &= dist >= 0.45 * h
    keep |= on_boundary
    grid = grid[keep]

    offset = len(grid)
    points = np.vstack([grid, sampling.points, sampling.ring_points])
    segments = [(a + offset, b + offset) for a, b in sampling.segments]

    for round_ in range(MAX_RECOVERY_ROUNDS + 1):
        triangles = np.asarray(Delaunay(points).simplices, dtype=np.int64)
        present = _edge_set(triangles)
        missing = {s for s in segments if tuple(sorted(s)) not in present}
        if not missing:
            break
        if round_ == MAX_RECOVERY_ROUNDS:
            a, b = next(iter(sorted(missing)))
            pa, pb = tuple(points[a]), tuple(points[b])
            raise MeshGenerationError(
                f"could not recover interface segment {pa} -> {pb}",
                segment=(pa, pb),
            )
        logger.debug(f"Recovering {len(missing)} interface segments by splitting")
        refined: list[tuple[int, int]] = []
        midpoints = []
        for a, b in segments:
            if (a, b) in missing:
                idx = len(points) + len(midpoints)
                midpoints.append(0.5 * (points[a] + points[b]))
                refined.extend([(a, idx), (idx, b)])
            else:
                refined.append((a, b))
        points = np.vstack([points, midpoints])
        segments = refined

    # Qhull may skip input points; drop them and reindex.
    used = np.unique(triangles)
    if len(used) < len(points):
        remap = np.full(len(points), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        points = points[used]
        triangles = remap[triangles]
        segments = [(int(remap[a]), int(remap[b])) for a, b in segments]

    areas = _signed_areas(points, triangles)
    flip = areas < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    if np.any(np.abs(areas) <= 1e-14):
        raise MeshGenerationError("triangulation produced degenerate elements")

    labels = _label_regions(points, triangles, segments, shape)
    mesh = TriMesh(points, triangles, labels)
    logger.info(
        f"Generated mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} elements, "
        f"{len(segments)} interface segments"
    )
    return mesh


# --------------------------------------------------------------------------
# Deformation and queries
# --------------------------------------------------------------------------


def deform(mesh: TriMesh, V: Any, t: float) -> TriMesh:
    """Transport every vertex by ``t * V``; boundary components of V are zeroed.

    Connectivity, labels and boundary flags are kept; validity is not checked.
    """
    values = np.array(getattr(V, "values", V), dtype=float)
    if values.shape != mesh.vertices.shape:
        raise InvalidMeshError(
            f"displacement has shape {values.shape}, expected {mesh.vertices.shape}"
        )
    values[mesh.boundary] = 0.0
    return mesh.with_vertices(mesh.vertices + t * values)


def validate(
    mesh: TriMesh, area_floor: float = 1e-12, angle_floor_deg: float = 5.0
) -> QualityReport:
    """Minimum signed area and minimum interior angle (degrees) of a mesh."""
    if mesh.n_triangles == 0:
        return QualityReport(float("inf"), 180.0, True)
    p = mesh.vertices[mesh.triangles]
    angles = np.empty((mesh.n_triangles, 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        norms = np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
        cos = np.einsum("ij,ij->i", u, v) / np.where(norms > 0, norms, 1.0)
        angles[:, k] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    min_area = float(mesh.signed_areas.min())
    min_angle = float(angles.min())
    return QualityReport(
        min_signed_area=min_area,
        min_angle=min_angle,
        valid=min_area > area_floor and min_angle > angle_floor_deg,
    )


def interface_edges(mesh: TriMesh) -> list[InterfaceEdge]:
    """Edges shared by a PLUS and a MINUS triangle, normals pointing PLUS -> MINUS."""
    topo = mesh.topology
    left, right = topo.edge_elements[:, 0], topo.edge_elements[:, 1]
    inner = right >= 0
    mixed = np.zeros(len(left), dtype=bool)
    mixed[inner] = mesh.labels[left[inner]] != mesh.labels[right[inner]]

    result = []
    for e in np.flatnonzero(mixed):
        a, b = (int(v) for v in topo.edges[e])
        t0, t1 = int(left[e]), int(right[e])
        plus, minus = (t0, t1) if mesh.labels[t0] == Label.PLUS else (t1, t0)
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        tangent = pb - pa
        length = float(np.hypot(*tangent))
        normal = np.array([tangent[1], -tangent[0]]) / length
        if np.dot(normal, mesh.centroids[plus] - pa) > 0:
            normal = -normal
        result.append(
            InterfaceEdge(
                endpoints=(a, b),
                normal=(float(normal[0]), float(normal[1])),
                length=length,
                plus_element=plus,
                minus_element=minus,
            )
        )
    return result


def interface_polylines(mesh: TriMesh) -> list[list[int]]:
    """Closed vertex loops formed by the interface edges."""
    adjacency: dict[int, list[int]] = {}
    for edge in interface_edges(mesh):
        a, b = edge.endpoints
        adjacency.setdefault(a, []).append(b)
        adjacency.setdefault(b, []).append(a)

    unused = {tuple(sorted((a, b))) for a, nbrs in adjacency.items() for b in nbrs}
    loops = []
    while unused:
        a, b = min(unused)
        unused.discard((a, b))
        loop = [a, b]
        while loop[-1] != loop[0]:
            nxt = next(
                (n for n in adjacency[loop[-1]] if tuple(sorted((loop[-1], n))) in unused),
                None,
            )
            if nxt is None:
                break
            unused.discard(tuple(sorted((loop[-1], nxt))))
            loop.append(nxt)
        loops.append(loop[:-1] if loop[-1] == loop[0] else loop)
    return loops


def interface_hausdorff(mesh: TriMesh, shape: ShapeSpec, per_edge: int = 4) -> float:
    """Symmetric Hausdorff distance between the interface and the shape boundary."""
    target = shape.boundary_samples()
    edges = interface_edges(mesh)
    if not edges and len(target) == 0:
        return 0.0
    if not edges or len(target) == 0:
        return float("inf")
    ends = np.array([e.endpoints for e in edges])
    s = np.linspace(0.0, 1.0, per_edge + 1)[:, None, None]
    pa, pb = mesh.vertices[ends[:, 0]], mesh.vertices[ends[:, 1]]
    polyline = ((1 - s) * pa + s * pb).reshape(-1, 2)
    forward, _ = cKDTree(target).query(polyline)
    backward, _ = cKDTree(polyline).query(target)
    return float(max(forward.max(), backward.max()))


@dataclass(frozen=True)
class Location:
    element: int
    barycentric: tuple[float, float, float]


def same_geometry(a: TriMesh, b: TriMesh) -> bool:
    """True when both meshes have identical vertices and connectivity."""
    return a is b or (
        a.vertices.shape == b.vertices.shape
        and a.triangles.shape == b.triangles.shape
        and np.array_equal(a.vertices, b.vertices)
        and np.array_equal(a.triangles, b.triangles)
    )


def barycentric_in(mesh: TriMesh, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points`` with respect to ``elements``.

    Shapes broadcast: elements (...), points (..., 2), result (..., 3).
    """
    grads = mesh.basis_gradients[elements]
    offset = points - mesh.centroids[elements]
    return 1.0 / 3.0 + np.einsum("...kd,...d->...k", grads, offset)


def locate_points(
    mesh: TriMesh, points: Any, tol: float = LOCATE_TOL
) -> tuple[np.ndarray, np.ndarray]:
    """Containing element (-1 if none) and barycentric coordinates per point.

    Candidates are the elements with the nearest centroids; points they miss
    are searched against every element.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    elements = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    if n == 0 or mesh.n_triangles == 0:
        return elements, bary

    k = min(LOCATE_CANDIDATES, mesh.n_triangles)
    _, candidates = mesh.centroid_tree.query(points, k=k)
    candidates = np.asarray(candidates, dtype=np.int64).reshape(n, k)
    lam = barycentric_in(mesh, candidates, points[:, None, :])
    slack = lam.min(axis=2)
    best = slack.argmax(axis=1)
    rows = np.arange(n)
    found = slack[rows, best] >= -tol
    elements[found] = candidates[rows, best][found]
    bary[found] = lam[rows, best][found]

    everything = np.arange(mesh.n_triangles)
    for i in np.flatnonzero(~found):
        lam_all = barycentric_in(mesh, everything, points[i])
        j = int(np.argmax(lam_all.min(axis=1)))
        if lam_all[j].min() >= -tol:
            elements[i] = j
            bary[i] = lam_all[j]

    hit = elements >= 0
    clipped = np.clip(bary[hit], 0.0, 1.0)
    bary[hit] = clipped / clipped.sum(axis=1, keepdims=True)
    return elements, bary


def locate(mesh: TriMesh, point: Any) -> Location | None:
    """Element containing ``point`` and its barycentric coordinates, or None."""
    x, y = (float(c) for c in point)
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        return None
    elements, bary = locate_points(mesh, [(x, y)])
    if elements[0] < 0:
        return None
    b = bary[0]
    return Location(int(elements[0]), (float(b[0]), float(b[1]), float(b[2])))


# --------------------------------------------------------------------------
# Snapshot text format
# --------------------------------------------------------------------------


def write_snapshot(
    mesh: TriMesh, path: str | Path, fields: dict[str, np.ndarray] | None = None
) -> Path:
    """Write ``nv nt``, vertex rows, triangle rows and optional FIELD sections."""
    path = Path(path)
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    for (x, y), flag in zip(mesh.vertices, mesh.boundary, strict=True):
        lines.append(f"{x:.17g} {y:.17g} {int(flag)}")
    for (a, b, c), label in zip(mesh.triangles, mesh.labels, strict=True):
        lines.append(f"{a} {b} {c} {int(label)}")
    for name, values in (fields or {}).items():
        values = np.asarray(values, dtype=float).reshape(mesh.n_vertices, -1)
        lines.append(f"FIELD {name}")
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in values)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_snapshot(path: str | Path) -> tuple[TriMesh, dict[str, np.ndarray]]:
    """Parse a snapshot written by :func:`write_snapshot`."""
    rows = Path(path).read_text().splitlines()

    def fail(lineno: int, why: str):
        raise InvalidMeshError(f"{path}:{lineno}: {why}", line=lineno)

    try:
        nv, nt = (int(v) for v in rows[0].split())
    except (IndexError, ValueError):
        fail(1, "expected header 'nv nt'")
    if len(rows) < 1 + nv + nt:
        fail(len(rows), f"expected {nv} vertex and {nt} triangle rows")

    vertices = np.empty((nv, 2))
    boundary = np.empty(nv, dtype=bool)
    for i in range(nv):
        parts = rows[1 + i].split()
        if len(parts) != 3:
            fail(2 + i, "expected 'x y boundary_flag'")
        vertices[i] = float(parts[0]), float(parts[1])
        boundary[i] = parts[2] == "1"

    triangles = np.empty((nt, 3), dtype=np.int64)
    labels = np.empty(nt, dtype=np.int8)
    for i in range(nt):
        lineno = 2 + nv + i
        parts = rows[lineno - 1].split()
        if len(parts) != 4:
            fail(lineno, "expected 'v0 v1 v2 label'")
        triangles[i] = [int(v) for v in parts[:3]]
        labels[i] = int(parts[3])
    if nt and (triangles.min() < 0 or triangles.max() >= nv):
        fail(2 + nv, "triangle references a missing vertex")

    fields: dict[str, np.ndarray] = {}
    cursor = 1 + nv + nt
    while cursor < len(rows):
        header = rows[cursor].split()
        if not header:
            cursor += 1
            continue
        if header[0] != "FIELD" or len(header) != 2:
            fail(cursor + 1, "expected 'FIELD <name>'")
        block = rows[cursor + 1 : cursor + 1 + nv]
        if len(block) != nv:
            fail(cursor + 1, f"field {header[1]} has fewer than {nv} rows")
        values = np.array([[float(v) for v in row.split()] for row in block])
        fields[header[1]] = values[:, 0] if values.shape[1] == 1 else values
        cursor += 1 + nv

    return TriMesh(vertices, triangles, labels, boundary), fields
