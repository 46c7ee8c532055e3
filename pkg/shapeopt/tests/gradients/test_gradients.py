"""Tests for Euclidean, H1 and RKHS descent directions."""

import numpy as np
import pytest

from shapeopt.exceptions import ConfigError
from shapeopt.fields import VectorFieldP1
from shapeopt.gradients import (
    GradientKind,
    GradientMethod,
    descent_value,
    euclidean_gradient_field,
    field_spread,
    finite_dim_gradient_field,
    gradient_field,
    h1_gradient_field,
    h1_inner,
    hat_functional,
    rkhs_gradient_field,
)
from shapeopt.kernels import (
    KernelProfile,
    RadialKernel,
    finite_dim_gradient,
    gram_matrix,
    rkhs_gradient_many,
)
from shapeopt.shape_calculus import dJ_vol, simple_tensors

from ..helpers import CENTER_DISC, grid_mesh, random_interior_field


@pytest.mark.unit
class TestGradientMethod:
    """Parsing and validation of gradient methods."""

    def test_parse(self):
        """Names are case insensitive."""
        assert GradientKind.parse("RKHS_Gauss") is GradientKind.RKHS_GAUSS
        assert GradientKind.parse(GradientKind.H1) is GradientKind.H1

    def test_unknown_method_lists_options(self):
        """Unknown names report the valid choices."""
        with pytest.raises(ConfigError) as excinfo:
            GradientKind.parse("l2")
        assert "rkhs_wendland" in str(excinfo.value)
        assert excinfo.value.key == "method"

    def test_kernel_requirements(self):
        """Only RKHS methods with a sigma have a kernel."""
        with pytest.raises(ConfigError):
            GradientMethod(GradientKind.RKHS_GAUSS).kernel()
        with pytest.raises(ConfigError):
            GradientMethod(GradientKind.H1, 1.0).kernel()
        with pytest.raises(ConfigError):
            GradientMethod(GradientKind.RKHS_GAUSS, -1.0)
        kernel = GradientMethod("rkhs_wendland", 2.0).kernel()
        assert kernel == RadialKernel(KernelProfile.WENDLAND, 2.0)

    def test_with_sigma_keeps_kind(self):
        """Replacing sigma keeps the other settings."""
        method = GradientMethod(GradientKind.RKHS_GAUSS, 10.0).with_sigma(5.0)
        assert method == GradientMethod(GradientKind.RKHS_GAUSS, 5.0)


@pytest.mark.unit
class TestMeshGradients:
    """Gradients represented in the P1 space of the mesh."""

    def test_hat_functional_represents_volume_expression(self, reference_state):
        """sum_i F_i . X_i = dJ_vol(X) for every P1 field X."""
        mesh = reference_state.mesh
        X = np.random.default_rng(1).normal(size=(mesh.n_vertices, 2))
        F = hat_functional(reference_state.tensors)
        assert np.sum(F * X) == pytest.approx(
            dJ_vol(reference_state.tensors, VectorFieldP1(mesh, X)), rel=1e-10, abs=1e-16
        )

    def test_euclidean_gradient(self, reference_state):
        """The hat-basis gradient vanishes on the boundary and descends."""
        field = euclidean_gradient_field(reference_state.mesh, reference_state.tensors)
        assert np.all(field.values[reference_state.mesh.boundary] == 0.0)
        assert descent_value(reference_state.tensors, field) < 0

    @pytest.mark.parametrize("seminorm", [False, True], ids=["full", "seminorm"])
    def test_h1_riesz_identity(self, reference_state, seminorm):
        """(V, X)_H1 = dJ_vol(X) for directions vanishing on the boundary."""
        mesh, tensors = reference_state.mesh, reference_state.tensors
        V = h1_gradient_field(mesh, tensors, seminorm)
        X = VectorFieldP1(mesh, random_interior_field(mesh, seed=2))
        assert h1_inner(mesh, V, X, seminorm) == pytest.approx(
            dJ_vol(tensors, X), rel=1e-7, abs=1e-14
        )
        assert np.all(V.values[mesh.boundary] == 0.0)
        assert descent_value(tensors, V) < 0

    def test_dispatch(self, reference_state):
        """gradient_field picks the representation from the method."""
        mesh, tensors = reference_state.mesh, reference_state.tensors
        euclidean = gradient_field(GradientMethod(GradientKind.EUCLIDEAN), mesh, tensors)
        assert np.array_equal(euclidean.values, euclidean_gradient_field(mesh, tensors).values)
        rkhs = gradient_field(GradientMethod(GradientKind.RKHS_GAUSS, 1.0), mesh, tensors)
        kernel = RadialKernel(KernelProfile.GAUSS, 1.0)
        assert np.array_equal(rkhs.values, rkhs_gradient_field(mesh, tensors, kernel).values)


@pytest.mark.unit
class TestRkhsGradients:
    """Closed-form and finite-dimensional RKHS gradients."""

    def test_closed_form_field(self, reference_state):
        """Vertex values are the closed form, zeroed on the boundary."""
        mesh = reference_state.mesh
        kernel = RadialKernel(KernelProfile.GAUSS, 10.0)
        field = rkhs_gradient_field(mesh, reference_state.tensors, kernel)
        expected = rkhs_gradient_many(reference_state.tensors, kernel, mesh.vertices)
        interior = ~mesh.boundary
        assert np.array_equal(field.values[interior], expected[interior])
        assert np.all(field.values[mesh.boundary] == 0.0)

    def test_finite_dim_energy_grows_with_nested_centers(self, reference_state):
        """Projections on nested subspaces capture more of the gradient norm."""
        kernel = RadialKernel(KernelProfile.GAUSS, 0.01)
        energies = []
        for n in (5, 9, 17):
            axis = np.linspace(0.0, 1.0, n)
            gx, gy = np.meshgrid(axis, axis, indexing="ij")
            centers = np.column_stack([gx.ravel(), gy.ravel()])
            gram = gram_matrix(kernel, centers)
            F = rkhs_gradient_many(reference_state.tensors, kernel, centers)
            alpha = finite_dim_gradient(gram, F)
            energies.append(float(alpha @ F.T.ravel()))
        assert energies[0] > 0
        assert energies[0] <= energies[1] * (1 + 1e-8)
        assert energies[1] <= energies[2] * (1 + 1e-8)

    def test_finite_dim_deviation_shrinks_with_nested_centers(self, reference_state):
        """At fixed sample points the finite-dim field approaches the closed form."""
        kernel = RadialKernel(KernelProfile.GAUSS, 0.01)
        samples = np.random.default_rng(21).uniform(0.1, 0.9, size=(10, 2))
        exact = rkhs_gradient_many(reference_state.tensors, kernel, samples)
        deviations = []
        for n in (5, 9, 17):
            gram = gram_matrix(kernel, grid_mesh(n).vertices)
            F = rkhs_gradient_many(reference_state.tensors, kernel, gram.centers)
            alpha = finite_dim_gradient(gram, F)
            deviations.append(float(np.abs(gram.evaluate(alpha, samples) - exact).max()))
        assert deviations[1] < deviations[0]
        assert deviations[2] < deviations[1]

    def test_finite_dim_field_interpolates_at_centers(self):
        """With the vertices as centers the field matches the closed form there."""
        mesh = grid_mesh(9, CENTER_DISC)
        tensors = simple_tensors(mesh, 1.0, 0.0)
        kernel = RadialKernel(KernelProfile.GAUSS, 0.01)
        field = finite_dim_gradient_field(mesh, tensors, kernel, mesh.vertices)
        expected = rkhs_gradient_many(tensors, kernel, mesh.vertices)
        interior = ~mesh.boundary
        scale = np.abs(expected).max()
        assert np.allclose(field.values[interior], expected[interior], atol=1e-8 * scale)

    def test_spread(self, reference_state):
        """Wide kernels give nearly uniform fields; constants have no spread."""
        mesh, tensors = reference_state.mesh, reference_state.tensors
        constant = VectorFieldP1(mesh, np.tile([0.3, -0.1], (mesh.n_vertices, 1)))
        assert field_spread(constant) == 0.0
        wide = rkhs_gradient_field(mesh, tensors, RadialKernel(KernelProfile.GAUSS, 1000.0))
        narrow = rkhs_gradient_field(mesh, tensors, RadialKernel(KernelProfile.GAUSS, 0.01))
        assert field_spread(wide) < field_spread(narrow)

    def test_wide_kernel_is_nearly_a_translation(self, reference_state):
        """At sigma = 1e3 the interior field varies by at most 10% of its mean."""
        mesh, tensors = reference_state.mesh, reference_state.tensors
        wide = rkhs_gradient_field(mesh, tensors, RadialKernel(KernelProfile.GAUSS, 1e3))
        assert field_spread(wide) <= 0.10
