"""Mesh and configuration builders shared by the test areas."""

from pathlib import Path

import numpy as np
import yaml

from shapeopt.mesh import Disc, Label, ShapeSpec, TriMesh

CENTER_DISC = ShapeSpec((Disc((0.5, 0.5), 0.2),))

# Small problem that runs in well under a second per solve.
COARSE_SETTINGS = {
    "algorithm": "variable_metric",
    "method": "rkhs_gauss",
    "sigma0": 1.0,
    "max_iter": 3,
    "max_halvings": 12,
    "grid_res": 9,
    "n_interface": 32,
    "initial_shape": [{"center": [0.4, 0.4], "radius": 0.15}],
    "target_shape": [{"center": [0.55, 0.5], "radius": 0.2}],
    "snapshot_every": 1,
}


def grid_mesh(n: int, shape: ShapeSpec | None = None) -> TriMesh:
    """Structured mesh of n x n points, every cell split along its diagonal."""
    axis = np.linspace(0.0, 1.0, n)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel()])
    triangles = []
    for i in range(n - 1):
        for j in range(n - 1):
            a, b = i * n + j, (i + 1) * n + j
            c, d = (i + 1) * n + j + 1, i * n + j + 1
            triangles.extend([(a, b, c), (a, c, d)])
    triangles = np.array(triangles)
    labels = np.full(len(triangles), Label.MINUS)
    if shape is not None:
        centroids = vertices[triangles].mean(axis=1)
        labels = np.where(shape.contains(centroids), Label.PLUS, Label.MINUS)
    return TriMesh(vertices, triangles, labels)


def write_config(directory: Path, **settings) -> Path:
    data = {**COARSE_SETTINGS, "output_dir": str(directory / "out"), **settings}
    path = directory / "config.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def random_interior_field(mesh: TriMesh, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    values = np.random.default_rng(seed).uniform(-scale, scale, size=(mesh.n_vertices, 2))
    values[mesh.boundary] = 0.0
    return values
