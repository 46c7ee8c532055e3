"""Radial kernels and RKHS shape gradients.

A radial kernel is K(x, y) = phi_sigma(|x - y|^2) I with phi_sigma(r) = phi(r / sigma).
Derivatives are those of the profile, phi'_sigma(r) := phi'(r / sigma), so the
chain-rule factor 1/sigma appears explicitly in the gradient formulas.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .exceptions import DuplicateCentersError, GramConditioningError
from .shape_calculus import ShapeTensors

logger = logging.getLogger(__name__)

MAX_GRAM_CONDITION = 1e12
DUPLICATE_TOL = 1e-14
# Evaluation points times quadrature points per block.
CHUNK_ENTRIES = 2**20


class KernelProfile(Enum):
    GAUSS = "gauss"
    WENDLAND = "wendland"


def _gauss(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e = np.exp(-s)
    return e, -e, e


def _wendland(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # (1 - s)_+^4 (4 s + 1); value and both derivatives vanish for s >= 1.
    inside = s < 1.0
    m = np.where(inside, 1.0 - s, 0.0)
    value = m**4 * (4.0 * s + 1.0)
    first = -20.0 * s * m**3
    second = 20.0 * m**2 * (4.0 * s - 1.0)
    return value, np.where(inside, first, 0.0), np.where(inside, second, 0.0)


_PROFILES = {KernelProfile.GAUSS: _gauss, KernelProfile.WENDLAND: _wendland}


@dataclass(frozen=True)
class RadialKernel:
    profile: KernelProfile
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "profile", KernelProfile(self.profile))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def evaluate(self, r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(phi_sigma, phi'_sigma, phi''_sigma) at squared distances ``r``."""
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("squared distance must be non-negative")
        return _PROFILES[self.profile](r / self.sigma)

    def matrix_value(self, x, y) -> np.ndarray:
        """Matrix-valued kernel K(x, y) = phi_sigma(|x - y|^2) I."""
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        value, _, _ = self.evaluate(float(diff @ diff))
        return float(value) * np.eye(2)

    def with_sigma(self, sigma: float) -> RadialKernel:
        return RadialKernel(self.profile, sigma)


def kernel_eval(kernel: RadialKernel, r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return kernel.evaluate(r)


def _chunks(ys: np.ndarray, n_quadrature: int):
    size = max(1, CHUNK_ENTRIES // max(n_quadrature, 1))
    for start in range(0, len(ys), size):
        yield ys[start : start + size]


def _offsets(tensors: ShapeTensors, ys: np.ndarray, kernel: RadialKernel):
    x, w, s1, s0 = tensors.flat()
    d = x[None, :, :] - ys[:, None, :]
    r = np.einsum("mqi,mqi->mq", d, d)
    phi, dphi, ddphi = kernel.evaluate(r)
    return d, w, s1, s0, phi, dphi, ddphi


def rkhs_gradient_many(
    tensors: ShapeTensors, kernel: RadialKernel, ys: np.ndarray
) -> np.ndarray:
    """Closed-form RKHS gradient at many points, shape (m, 2)."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    out = np.zeros((len(ys), 2))
    pos = 0
    for chunk in _chunks(ys, len(tensors.weights)):
        d, w, s1, s0, phi, dphi, _ = _offsets(tensors, chunk, kernel)
        s1d = np.einsum("qij,mqj->mqi", s1, d)
        integrand = phi[..., None] * s0[None] + (2.0 / kernel.sigma) * dphi[..., None] * s1d
        out[pos : pos + len(chunk)] = np.einsum("q,mqi->mi", w, integrand)
        pos += len(chunk)
    return out


def rkhs_jacobian_many(
    tensors: ShapeTensors, kernel: RadialKernel, ys: np.ndarray
) -> np.ndarray:
    """Jacobian d_y of the RKHS gradient at many points, shape (m, 2, 2)."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    out = np.zeros((len(ys), 2, 2))
    sigma = kernel.sigma
    pos = 0
    for chunk in _chunks(ys, len(tensors.weights)):
        d, w, s1, s0, _, dphi, ddphi = _offsets(tensors, chunk, kernel)
        s1d = np.einsum("qij,mqj->mqi", s1, d)
        first = np.einsum("qi,mqj->mqij", s0, d) + s1[None]
        second = np.einsum("mqi,mqj->mqij", s1d, d)
        integrand = (2.0 / sigma) * dphi[..., None, None] * first + (
            4.0 / sigma**2
        ) * ddphi[..., None, None] * second
        out[pos : pos + len(chunk)] = -np.einsum("q,mqij->mij", w, integrand)
        pos += len(chunk)
    return out


def rkhs_divergence_many(
    tensors: ShapeTensors, kernel: RadialKernel, ys: np.ndarray
) -> np.ndarray:
    """Divergence of the RKHS gradient at many points, shape (m,)."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    out = np.zeros(len(ys))
    sigma = kernel.sigma
    pos = 0
    for chunk in _chunks(ys, len(tensors.weights)):
        d, w, s1, s0, _, dphi, ddphi = _offsets(tensors, chunk, kernel)
        trace = s1[:, 0, 0] + s1[:, 1, 1]
        s0d = np.einsum("qi,mqi->mq", s0, d)
        ds1d = np.einsum("mqi,qij,mqj->mq", d, s1, d)
        integrand = (2.0 / sigma) * dphi * (s0d + trace[None]) + (
            4.0 / sigma**2
        ) * ddphi * ds1d
        out[pos : pos + len(chunk)] = -integrand @ w
        pos += len(chunk)
    return out


def rkhs_gradient_at(tensors: ShapeTensors, kernel: RadialKernel, y) -> np.ndarray:
    """sum_q w_q [phi_sigma S0 + (2/sigma) phi'_sigma S1 (x_q - y)]."""
    return rkhs_gradient_many(tensors, kernel, np.asarray(y, dtype=float)[None])[0]


def rkhs_jacobian_at(tensors: ShapeTensors, kernel: RadialKernel, y) -> np.ndarray:
    return rkhs_jacobian_many(tensors, kernel, np.asarray(y, dtype=float)[None])[0]


def rkhs_divergence_at(tensors: ShapeTensors, kernel: RadialKernel, y) -> float:
    return float(
        rkhs_divergence_many(tensors, kernel, np.asarray(y, dtype=float)[None])[0]
    )


def gauss_gradient_at(tensors: ShapeTensors, sigma: float, y) -> np.ndarray:
    """Gauss kernel gradient: int exp(-|x-y|^2/sigma) (S0 - (2/sigma) S1 (x-y))."""
    diff = tensors.points - np.asarray(y, dtype=float)
    weight = tensors.weights * np.exp(-np.sum(diff**2, axis=1) / sigma)
    term = tensors.S0 - (2.0 / sigma) * np.einsum("mij,mj->mi", tensors.S1, diff)
    return weight @ term


def gauss_divergence_at(tensors: ShapeTensors, sigma: float, y) -> float:
    """Gauss kernel divergence:
    int exp(-|x-y|^2/sigma) [(2/sigma)(S0.(x-y) + tr S1) - (4/sigma^2)(x-y).S1(x-y)].
    """
    diff = tensors.points - np.asarray(y, dtype=float)
    s1 = tensors.S1
    weight = tensors.weights * np.exp(-np.sum(diff**2, axis=1) / sigma)
    linear = np.einsum("mi,mi->m", tensors.S0, diff) + s1[:, 0, 0] + s1[:, 1, 1]
    quadratic = np.einsum("mi,mij,mj->m", diff, s1, diff)
    return float(weight @ ((2.0 / sigma) * linear - (4.0 / sigma**2) * quadratic))


@dataclass(frozen=True, eq=False)
class GramSystem:
    """Gram matrix of a radial kernel on a set of centers.

    The vector-valued system A_N = I_2 (x) G acts on coefficients ordered by
    component: alpha = [alpha_x (N), alpha_y (N)].
    """

    kernel: RadialKernel
    centers: np.ndarray
    gram: np.ndarray

    @property
    def size(self) -> int:
        return len(self.centers)

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.kron(np.eye(2), self.gram)

    @cached_property
    def condition(self) -> float:
        return float(np.linalg.cond(self.gram))

    @cached_property
    def factor(self):
        if self.condition > MAX_GRAM_CONDITION:
            raise GramConditioningError(
                f"Gram matrix condition estimate {self.condition:.3e} exceeds "
                f"{MAX_GRAM_CONDITION:.0e}; use a smaller sigma relative to the "
                f"center spacing or fewer centers",
                condition=self.condition,
            )
        return cho_factor(self.gram)

    def sections(self, points: np.ndarray) -> np.ndarray:
        """phi_sigma(|y - z_k|^2) for every point y and center z_k, shape (m, N)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        value, _, _ = self.kernel.evaluate(cdist(points, self.centers, "sqeuclidean"))
        return value

    def evaluate(self, alpha: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Field sum_k alpha_k K(., z_k) e_i at ``points``, shape (m, 2)."""
        coeffs = np.asarray(alpha, dtype=float).reshape(2, self.size)
        return self.sections(points) @ coeffs.T

    def inner(self, alpha: np.ndarray, beta: np.ndarray) -> float:
        """RKHS inner product of two expansions over the centers."""
        return float(np.asarray(alpha) @ self.matrix @ np.asarray(beta))


def gram_matrix(kernel: RadialKernel, centers) -> GramSystem:
    """Scalar Gram matrix k_ij = phi_sigma(|z_i - z_j|^2).

    Raises:
        DuplicateCentersError: If two centers coincide within 1e-14.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    sq = cdist(centers, centers, "sqeuclidean")
    close = np.argwhere(np.triu(sq <= DUPLICATE_TOL**2, k=1))
    if len(close):
        i, j = (int(v) for v in close[0])
        raise DuplicateCentersError(
            f"centers {i} and {j} coincide at {tuple(centers[i])}", indices=(i, j)
        )
    value, _, _ = kernel.evaluate(sq)
    gram = 0.5 * (value + value.T)
    return GramSystem(kernel, centers, gram)


def finite_dim_gradient(gram: GramSystem, functional_values) -> np.ndarray:
    """Coefficients alpha solving A_N alpha = F_N.

    ``functional_values`` holds dJ(K(., z_k) e_i) either as a flat vector in
    component order or as an (N, 2) array.

    Raises:
        GramConditioningError: If the Gram matrix is too ill-conditioned.
    """
    values = np.asarray(functional_values, dtype=float)
    rhs = values.T if values.ndim == 2 else values.reshape(2, gram.size)
    if not np.any(rhs):
        return np.zeros(2 * gram.size)
    alpha = cho_solve(gram.factor, rhs.T).T
    logger.debug(
        f"Solved Gram system with {gram.size} centers (condition {gram.condition:.2e})"
    )
    return alpha.reshape(-1)


@dataclass(frozen=True)
class SigmaScaling:
    """Sup-norms of the gradient's derivatives at one sigma."""

    sigma: float
    divergence: float
    jacobian: float


def sigma_scaling(
    tensors: ShapeTensors, profile: KernelProfile, sigmas, points: np.ndarray
) -> list[SigmaScaling]:
    """max |div| and max |d_y entry| of the RKHS gradient over ``points`` per sigma."""
    rows = []
    for sigma in sigmas:
        kernel = RadialKernel(profile, float(sigma))
        div = rkhs_divergence_many(tensors, kernel, points)
        jac = rkhs_jacobian_many(tensors, kernel, points)
        rows.append(
            SigmaScaling(float(sigma), float(np.abs(div).max()), float(np.abs(jac).max()))
        )
    return rows


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)
