"""Tests for the shape-derivative tensors and the derivative expressions."""

import logging
import math
from dataclasses import replace

import numpy as np
import pytest

from shapeopt.exceptions import InvalidDeformationError, UnsupportedTensorsError
from shapeopt.fem import ProblemData, cost
from shapeopt.fields import ScalarFieldP1, VectorFieldP1
from shapeopt.mesh import Label, deform, generate_mesh, interface_edges
from shapeopt.optimizer import evaluate_state
from shapeopt.shape_calculus import (
    DerivativeKind,
    DirectionalDerivative,
    GeometricFunctional,
    TrackingFunctional,
    conservation_check,
    dJ_bd,
    dJ_vol,
    derivative_report,
    fd_oracle,
    geometric_cost,
    ibp_identity_check,
    random_direction,
    simple_tensors,
)

from ..helpers import random_interior_field


def dilation(mesh, center=(0.5, 0.5)) -> VectorFieldP1:
    values = mesh.vertices - np.asarray(center)
    values[mesh.boundary] = 0.0
    return VectorFieldP1(mesh, values)


@pytest.mark.unit
class TestGeometricFunctional:
    """J = f1 |PLUS| + f2 |MINUS| has known derivatives."""

    def test_dilation_derivative(self, disc_mesh):
        """Dilating a disc about its center changes its area at rate 2 |Omega|."""
        tensors = simple_tensors(disc_mesh, 1.0, 0.0)
        X = dilation(disc_mesh)
        volume = dJ_vol(tensors, X)
        assert volume == pytest.approx(2.0 * disc_mesh.plus_area(), rel=1e-12)
        assert volume == pytest.approx(2.0 * math.pi * 0.2**2, rel=2e-2)

    def test_fd_oracle_matches_volume_expression(self, disc_mesh):
        """Central differences of the mesh area agree with dJ_vol."""
        tensors = simple_tensors(disc_mesh, 1.0, 0.0)
        X = VectorFieldP1(disc_mesh, random_interior_field(disc_mesh, seed=4, scale=0.1))
        fd = fd_oracle(GeometricFunctional(1.0, 0.0), disc_mesh, X, 1e-3)
        assert fd == pytest.approx(dJ_vol(tensors, X), rel=1e-6)

    def test_boundary_expressions_equal_volume(self, disc_mesh):
        """For constant phases BD1, BD2 and VOL coincide."""
        tensors = simple_tensors(disc_mesh, 2.0, 0.5)
        X = VectorFieldP1(disc_mesh, random_interior_field(disc_mesh, seed=5))
        edges = interface_edges(disc_mesh)
        volume = dJ_vol(tensors, X)
        for kind in ("bd1", "bd2"):
            assert dJ_bd(tensors, edges, X, kind) == pytest.approx(volume, rel=1e-9, abs=1e-13)

    def test_integration_by_parts_identity(self, disc_mesh):
        """Volume and edge-jump sums agree for piecewise-constant S1."""
        tensors = simple_tensors(disc_mesh, 2.0, 0.5)
        X = VectorFieldP1(disc_mesh, random_interior_field(disc_mesh, seed=6))
        assert ibp_identity_check(tensors, disc_mesh, X) <= 1e-10

    def test_conservation_of_simple_tensors(self, disc_mesh):
        """Constant S1 with S0 = 0 is divergence free."""
        report = conservation_check(simple_tensors(disc_mesh, 1.0, 3.0))
        assert report.passed
        assert report.max_residual == 0.0

    def test_geometric_cost(self, disc_mesh):
        """f1 = f2 = 1 integrates to the domain area."""
        assert geometric_cost(disc_mesh, 1.0, 1.0) == pytest.approx(1.0)


@pytest.mark.unit
class TestTransmissionTensors:
    """Tensors of the tracking functional."""

    def test_s1_is_symmetric(self, reference_state):
        """S1 is symmetric at every quadrature point."""
        S1 = reference_state.tensors.S1
        assert np.allclose(S1, np.swapaxes(S1, -1, -2), atol=1e-15)

    def test_volume_expression_is_linear(self, reference_state):
        """dJ_vol(X + 2Y) = dJ_vol(X) + 2 dJ_vol(Y)."""
        mesh = reference_state.mesh
        rng = np.random.default_rng(7)
        X, Y = random_direction(mesh, rng), random_direction(mesh, rng)
        tensors = reference_state.tensors
        combined = dJ_vol(tensors, X + Y * 2.0)
        expected = dJ_vol(tensors, X) + 2.0 * dJ_vol(tensors, Y)
        assert combined == pytest.approx(expected, rel=1e-10, abs=1e-16)

    def test_checks_refuse_transmission_tensors(self, reference_state):
        """Both constant-tensor checks reject the transmission tensors."""
        X = VectorFieldP1.zeros(reference_state.mesh)
        with pytest.raises(UnsupportedTensorsError):
            ibp_identity_check(reference_state.tensors, reference_state.mesh, X)
        with pytest.raises(UnsupportedTensorsError):
            conservation_check(reference_state.tensors)

    def test_empty_interface_warns(self, reference_state, caplog):
        """No interface edges give zero with a warning."""
        X = VectorFieldP1.zeros(reference_state.mesh)
        with caplog.at_level(logging.WARNING, logger="shapeopt.shape_calculus"):
            assert dJ_bd(reference_state.tensors, [], X) == 0.0
        assert "Empty interface" in caplog.text

    def test_boundary_kind_must_be_bd(self, reference_state):
        """Only bd1 and bd2 are boundary expressions."""
        X = VectorFieldP1.zeros(reference_state.mesh)
        with pytest.raises(ValueError):
            dJ_bd(reference_state.tensors, interface_edges(reference_state.mesh), X, "vol")

    def test_derivative_report(self, reference_state):
        """The report lists VOL, BD1, BD2 and the optional FD value."""
        X = random_direction(reference_state.mesh, np.random.default_rng(8))
        report = derivative_report(reference_state.tensors, X, fd=0.5)
        assert [d.kind for d in report] == [
            DerivativeKind.VOL,
            DerivativeKind.BD1,
            DerivativeKind.BD2,
            DerivativeKind.FD,
        ]
        assert report[0].value == dJ_vol(reference_state.tensors, X)

    def test_non_finite_derivative(self):
        """Derivative values must be finite."""
        with pytest.raises(ValueError):
            DirectionalDerivative(float("nan"), DerivativeKind.VOL)


@pytest.mark.integration
class TestFiniteDifferenceOracle:
    """dJ_vol against central differences of the tracking cost."""

    def test_volume_expression_matches_finite_differences(self, reference_state, reference_config):
        """Five smoothed random directions agree to one percent."""
        rng = np.random.default_rng(reference_config.seed)
        for _ in range(5):
            X = random_direction(reference_state.mesh, rng)
            fd = fd_oracle(reference_state.data, reference_state.mesh, X, 1e-4)
            volume = dJ_vol(reference_state.tensors, X)
            assert abs(volume - fd) <= 1e-2 * max(abs(fd), 1e-12)

    def test_error_decreases_with_step(self, coarse_state):
        """Shrinking t from 1e-3 to 1e-5 brings the central difference closer to dJ_vol."""
        X = random_direction(coarse_state.mesh, np.random.default_rng(12))
        volume = dJ_vol(coarse_state.tensors, X)
        errors = [
            abs(fd_oracle(coarse_state.data, coarse_state.mesh, X, t, cg_tol=1e-13) - volume)
            for t in (1e-3, 1e-4, 1e-5)
        ]
        floor = 1e-6 * abs(volume)
        for coarse, fine in zip(errors, errors[1:]):
            assert fine < coarse or fine <= floor
        assert errors[-1] <= 1e-2 * abs(volume)

    def test_large_step_is_invalid(self, reference_state):
        """A step that inverts elements is reported."""
        X = random_direction(reference_state.mesh, np.random.default_rng(9))
        with pytest.raises(InvalidDeformationError):
            fd_oracle(reference_state.data, reference_state.mesh, X, 10.0)

    def test_tracking_functional_requires_target(self):
        """Without u_d there is nothing to track."""
        with pytest.raises(ValueError):
            TrackingFunctional(ProblemData())

    def test_tracking_functional_on_reference_mesh(self, reference_state):
        """On the undeformed mesh the functional is the ordinary cost."""
        functional = TrackingFunctional(reference_state.data)
        J = functional.evaluate(reference_state.mesh)
        assert J == pytest.approx(reference_state.J, rel=1e-12)

    def test_target_lives_on_target_fitted_mesh(self, reference_state, reference_config):
        """u_d is solved once on a mesh whose phases follow the target shape."""
        target_mesh = reference_state.u_d.mesh
        target_shape = reference_config.opt_config().target_shape
        assert target_mesh is not reference_state.mesh
        plus = target_mesh.labels == Label.PLUS
        assert np.array_equal(plus, target_shape.contains(target_mesh.centroids))


@pytest.mark.integration
@pytest.mark.slow
class TestBoundaryExpressionConvergence:
    """BD1 and BD2 approach VOL under refinement."""

    def test_gap_shrinks_over_three_levels(self, reference_config):
        """|BD - VOL| decreases from (11, 50) to (21, 100) to (41, 200)."""
        base = reference_config.opt_config()

        def smooth(points):
            x, y = points[:, 0], points[:, 1]
            bump = 16.0 * x * (1.0 - x) * y * (1.0 - y)
            return bump[:, None] * np.array([1.0, 0.5])

        gaps = {"bd1": [], "bd2": []}
        for grid_res, n_interface in ((11, 50), (21, 100), (41, 200)):
            opt = replace(base, grid_res=grid_res, n_interface=n_interface)
            mesh = generate_mesh(opt.initial_shape, n_interface, grid_res)
            state = evaluate_state(mesh, opt)
            X = VectorFieldP1.interpolate(mesh, smooth)
            volume = dJ_vol(state.tensors, X)
            edges = interface_edges(mesh)
            for kind, gap in gaps.items():
                gap.append(abs(dJ_bd(state.tensors, edges, X, kind) - volume))
        for gap in gaps.values():
            assert gap[1] < gap[0]
            assert gap[2] < gap[1]

@pytest.mark.unit
class TestOverlayCost:
    """Tracking cost with u_d on another triangulation of the square."""

    def test_same_linear_function_gives_zero(self, disc_mesh):
        """A globally linear function sampled on both meshes has no mismatch."""
        moved = deform(disc_mesh, random_interior_field(disc_mesh, seed=10), 1e-4)

        def linear(x, y):
            return 0.3 + 2.0 * x - y

        error = cost(
            moved,
            ScalarFieldP1.interpolate(moved, linear),
            ScalarFieldP1.interpolate(disc_mesh, linear),
        )
        assert error < 1e-20

    def test_constant_difference_gives_domain_area(self, disc_mesh):
        """|1 - 0|^2 integrates to the area of the unit square."""
        moved = deform(disc_mesh, random_interior_field(disc_mesh, seed=11), 1e-4)
        error = cost(
            moved,
            ScalarFieldP1(moved, np.ones(moved.n_vertices)),
            ScalarFieldP1.zeros(disc_mesh),
        )
        assert error == pytest.approx(1.0, rel=1e-10)

    def test_matches_interpolated_cost_on_identical_meshes(self, disc_mesh):
        """Without movement the overlay reduces to the midpoint rule."""
        u = ScalarFieldP1.interpolate(disc_mesh, lambda x, y: x * y)
        assert cost(disc_mesh, u, ScalarFieldP1.zeros(disc_mesh)) == pytest.approx(
            1.0 / 9.0, rel=5e-2
        )


@pytest.mark.unit
class TestRandomDirection:
    """Seeded smooth test directions."""

    def test_properties(self, disc_mesh):
        """Zero on the boundary, bounded by one and reproducible."""
        first = random_direction(disc_mesh, np.random.default_rng(3))
        second = random_direction(disc_mesh, np.random.default_rng(3))
        assert np.array_equal(first.values, second.values)
        assert np.all(first.values[disc_mesh.boundary] == 0.0)
        assert np.abs(first.values).max() <= 1.0
        assert np.abs(first.values[~disc_mesh.boundary]).max() > 0
