"""Tests for P1 assembly, conjugate gradients and the transmission solves."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeopt.exceptions import InvalidMeshError, MeshMismatchError, SolverError
from shapeopt.fem import (
    ProblemData,
    TransmissionSolver,
    assemble_system,
    compute_target,
    conjugate_gradients,
    cost,
    free_vertices,
    frozen_target,
    load_vector,
    mass_matrix,
    restrict_to_free,
    solve_adjoint,
    solve_state,
    stiffness_matrix,
    tracking_quadrature,
)
from shapeopt.fields import ScalarFieldP1
from shapeopt.mesh import Label, TriMesh

from ..helpers import CENTER_DISC, grid_mesh


@pytest.mark.unit
class TestAssembly:
    """Stiffness and mass matrices."""

    def test_stiffness_is_symmetric_with_constant_kernel(self, disc_mesh):
        """Constants lie in the kernel of the full stiffness matrix."""
        data = ProblemData()
        K = stiffness_matrix(disc_mesh, data.coefficient(disc_mesh))
        assert abs(K - K.T).max() < 1e-12
        assert np.allclose(K @ np.ones(disc_mesh.n_vertices), 0.0, atol=1e-10)

    def test_mass_matrix_integrates_domain(self, disc_mesh):
        """1^T M 1 is the area of the unit square."""
        M = mass_matrix(disc_mesh)
        ones = np.ones(disc_mesh.n_vertices)
        assert ones @ (M @ ones) == pytest.approx(1.0)

    def test_load_vector_integrates_linear_function(self):
        """sum_i int x phi_i = int x = 1/2."""
        mesh = grid_mesh(7)
        assert load_vector(mesh, mesh.vertices[:, 0]).sum() == pytest.approx(0.5)

    def test_coefficient_per_phase(self, disc_mesh):
        """beta follows the element labels."""
        beta = ProblemData(beta_plus=2.0, beta_minus=0.25).coefficient(disc_mesh)
        assert np.all(beta[disc_mesh.labels == Label.PLUS] == 2.0)
        assert np.all(beta[disc_mesh.labels == Label.MINUS] == 0.25)

    def test_non_positive_conductivity(self):
        """Conductivities must be positive."""
        with pytest.raises(ValueError):
            ProblemData(beta_plus=0.0)

    def test_inverted_mesh_is_refused(self):
        """Assembly refuses meshes with non-positive element areas."""
        mesh = grid_mesh(5)
        triangles = np.array(mesh.triangles)
        triangles[3] = triangles[3, [1, 0, 2]]
        flipped = TriMesh(mesh.vertices, triangles, mesh.labels)
        with pytest.raises(InvalidMeshError) as excinfo:
            assemble_system(flipped, ProblemData())
        assert excinfo.value.report.min_signed_area < 0


@pytest.mark.unit
class TestConjugateGradients:
    """Jacobi-preconditioned CG."""

    def test_solves_poisson_system(self):
        """The true residual meets the tolerance."""
        mesh = grid_mesh(17)
        system = restrict_to_free(stiffness_matrix(mesh), free_vertices(mesh))
        b = np.random.default_rng(1).normal(size=system.shape[0])
        result = conjugate_gradients(system, b, tol=1e-10)
        assert np.linalg.norm(system @ result.x - b) <= 1e-10 * np.linalg.norm(b)
        assert result.residual_history[0] == pytest.approx(1.0)

    def test_zero_right_hand_side(self):
        """b = 0 returns zero without iterating."""
        result = conjugate_gradients(np.eye(3), np.zeros(3))
        assert result.iterations == 0
        assert np.array_equal(result.x, np.zeros(3))

    def test_non_convergence_reports_history(self):
        """Too few iterations raise with the residual history attached."""
        mesh = grid_mesh(17)
        system = restrict_to_free(stiffness_matrix(mesh), free_vertices(mesh))
        b = np.random.default_rng(2).normal(size=system.shape[0])
        with pytest.raises(SolverError) as excinfo:
            conjugate_gradients(system, b, tol=1e-12, max_iter=2)
        assert len(excinfo.value.residual_history) == 3
        assert excinfo.value.residual > 1e-12


@pytest.mark.unit
class TestStateAndAdjoint:
    """Transmission state, adjoint and cost."""

    def test_manufactured_solution_converges_quadratically(self):
        """Nodal max error of -lap u = 2 pi^2 sin sin decays with order >= 1.8."""

        def exact(x, y):
            return np.sin(np.pi * x) * np.sin(np.pi * y)

        errors = []
        for n in (9, 17, 33):
            mesh = grid_mesh(n)
            f = ScalarFieldP1.interpolate(mesh, lambda x, y: 2 * np.pi**2 * exact(x, y))
            u = solve_state(mesh, ProblemData(1.0, 1.0, f))
            errors.append(np.max(np.abs(u.values - exact(*mesh.vertices.T))))
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(orders >= 1.8)

    def test_state_vanishes_on_boundary_and_is_positive(self):
        """f = 1 gives a positive solution with zero boundary values."""
        mesh = grid_mesh(11, CENTER_DISC)
        u = solve_state(mesh, ProblemData())
        assert np.all(u.values[mesh.boundary] == 0.0)
        assert np.all(u.values[~mesh.boundary] > 0.0)

    def test_zero_source_gives_zero_state(self, disc_mesh):
        """f = 0 has the trivial solution."""
        u = solve_state(disc_mesh, ProblemData(f=0.0))
        assert np.array_equal(u.values, np.zeros(disc_mesh.n_vertices))

    def test_adjoint_sign(self):
        """With u_d = 0 the adjoint is negative where the state is positive."""
        mesh = grid_mesh(11, CENTER_DISC)
        data = ProblemData().with_target(ScalarFieldP1.zeros(mesh))
        u = solve_state(mesh, data)
        p = solve_adjoint(mesh, data, u)
        assert np.all(p.values[~mesh.boundary] < 0.0)

    def test_adjoint_vanishes_on_target(self, disc_mesh):
        """u_d = u makes the adjoint right-hand side zero."""
        u = solve_state(disc_mesh, ProblemData())
        p = solve_adjoint(disc_mesh, ProblemData().with_target(u), u)
        assert np.array_equal(p.values, np.zeros(disc_mesh.n_vertices))

    def test_adjoint_requires_state_on_same_mesh(self, disc_mesh):
        """States from another mesh are rejected."""
        other = grid_mesh(5)
        with pytest.raises(MeshMismatchError):
            solve_adjoint(disc_mesh, ProblemData(), ScalarFieldP1.zeros(other))

    def test_cost_is_exact_for_p1(self):
        """int x^2 over the unit square is 1/3."""
        mesh = grid_mesh(6)
        u = ScalarFieldP1.interpolate(mesh, lambda x, y: x)
        assert cost(mesh, u, ScalarFieldP1.zeros(mesh)) == pytest.approx(1.0 / 3.0, abs=1e-14)

    def test_target_equal_to_initial_shape_gives_zero_cost(self, disc_mesh):
        """Labels read from the same shape reproduce the state exactly."""
        data = ProblemData()
        u_d = compute_target(disc_mesh, CENTER_DISC, data)
        solver = TransmissionSolver(disc_mesh, data.with_target(u_d))
        assert solver.cost(solver.state()) == 0.0

    def test_frozen_target_on_fitted_mesh(self, disc_mesh):
        """A run whose initial shape is the target starts at J0 = 0."""
        data = ProblemData()
        u_d = frozen_target(CENTER_DISC, data, 64, 15)
        assert u_d.mesh is not disc_mesh
        solver = TransmissionSolver(disc_mesh, data.with_target(u_d))
        assert solver.cost(solver.state()) == 0.0

    def test_tracking_load_is_cost_gradient(self, disc_mesh):
        """2 int (u - u_d) phi_i is the derivative of the overlay cost in u_i."""
        mesh = grid_mesh(9)
        u_d = ScalarFieldP1.interpolate(disc_mesh, lambda x, y: np.sin(3.0 * x) * y)
        u = ScalarFieldP1.interpolate(mesh, lambda x, y: x * y)
        tracking = tracking_quadrature(mesh, u_d)
        load = 2.0 * tracking.quadrature.scatter(tracking.residual(u))
        eps = 1e-4
        for i in (10, 40, 60):
            step = np.zeros(mesh.n_vertices)
            step[i] = eps
            forward = cost(mesh, ScalarFieldP1(mesh, u.values + step), u_d)
            backward = cost(mesh, ScalarFieldP1(mesh, u.values - step), u_d)
            assert (forward - backward) / (2.0 * eps) == pytest.approx(load[i], rel=1e-6, abs=1e-12)

    def test_solver_matches_free_functions(self, disc_mesh):
        """The cached system gives the same state as a fresh assembly."""
        data = ProblemData(beta_plus=3.0)
        solver = TransmissionSolver(disc_mesh, data)
        assert np.allclose(solver.state().values, solve_state(disc_mesh, data).values)


@pytest.mark.property
class TestFemProperties:
    """Solves across random conductivities."""

    @given(
        beta_plus=st.floats(min_value=0.1, max_value=10.0),
        beta_minus=st.floats(min_value=0.1, max_value=10.0),
    )
    @settings(max_examples=10, deadline=None)
    def test_state_satisfies_discrete_equation(self, disc_mesh, beta_plus, beta_minus):
        """A u = b holds on the free vertices to the solver tolerance."""
        data = ProblemData(beta_plus, beta_minus)
        system = assemble_system(disc_mesh, data)
        u = solve_state(disc_mesh, data, system)
        b = system.restrict(load_vector(disc_mesh, data.source_values(disc_mesh)))
        residual = system @ system.restrict(u.values) - b
        assert np.linalg.norm(residual) <= 1e-9 * np.linalg.norm(b)
