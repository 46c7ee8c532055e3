"""Standard and variable-metric shape gradient descent."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .exceptions import ConfigError
from .fem import (
    DEFAULT_CG_TOL,
    ProblemData,
    TransmissionSolver,
    frozen_target,
)
from .fields import ScalarFieldP1, VectorFieldP1
from .gradients import GradientKind, GradientMethod, descent_value, gradient_field
from .mesh import ShapeSpec, TriMesh, deform, generate_mesh, validate
from .shape_calculus import ShapeTensors, TrackingFunctional, assemble_tensors

logger = logging.getLogger(__name__)


class AlgorithmKind(Enum):
    STANDARD = "standard"
    VARIABLE_METRIC = "variable_metric"


class TerminationReason(Enum):
    MAX_ITER = "max_iter"
    NO_SUFFICIENT_DECREASE = "no_sufficient_decrease"
    LINE_SEARCH_FAILED = "line_search_failed"
    SIGMA_FLOOR = "sigma_floor"
    CONVERGED_AT_START = "converged_at_start"
    NOT_DESCENT = "not_descent"


@dataclass(frozen=True)
class OptConfig:
    method: GradientMethod
    algorithm: AlgorithmKind = AlgorithmKind.VARIABLE_METRIC
    sigma0: float = 10.0
    gamma: float = 1e-2
    q: float = 0.5
    max_iter: int = 500
    t0: float = 1.0
    max_halvings: int = 30
    sigma_min: float = 1e-4
    data: ProblemData = field(default_factory=ProblemData)
    initial_shape: ShapeSpec = field(default_factory=ShapeSpec)
    target_shape: ShapeSpec = field(default_factory=ShapeSpec)
    grid_res: int = 21
    n_interface: int = 100
    cg_tol: float = DEFAULT_CG_TOL
    area_floor: float = 1e-12
    angle_floor_deg: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", AlgorithmKind(self.algorithm))
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}", key="q")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}", key="gamma")
        if not self.sigma0 >= self.sigma_min > 0:
            raise ConfigError(
                f"need sigma0 >= sigma_min > 0, got sigma0={self.sigma0}, "
                f"sigma_min={self.sigma_min}",
                key="sigma_min",
            )
        if self.max_iter < 0:
            raise ConfigError("max_iter must be non-negative", key="max_iter")
        if self.max_halvings < 1:
            raise ConfigError("max_halvings must be at least 1", key="max_halvings")
        if not self.t0 > 0:
            raise ConfigError(f"t0 must be positive, got {self.t0}", key="t0")
        if (
            self.algorithm is AlgorithmKind.VARIABLE_METRIC
            and not self.method.kind.is_rkhs
        ):
            raise ConfigError(
                "the variable metric algorithm requires an RKHS method", key="method"
            )


@dataclass
class IterationRecord:
    n: int
    J: float
    t: float
    sigma: float
    grad_norm: float
    accepted: bool
    wall_time: float = 0.0
    descent: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.n,
            "J": self.J,
            "t": self.t,
            "sigma": self.sigma,
            "grad_norm": self.grad_norm,
            "accepted": int(self.accepted),
            "wall_time": self.wall_time,
            "descent": self.descent,
        }


@dataclass
class SigmaReduction:
    n: int
    old: float
    new: float
    cause: str


@dataclass
class OptHistory:
    records: list[IterationRecord] = field(default_factory=list)
    meshes: dict[int, TriMesh] = field(default_factory=dict)
    sigma_reductions: list[SigmaReduction] = field(default_factory=list)
    termination: TerminationReason = TerminationReason.MAX_ITER
    final_state: OptState | None = None

    @property
    def initial_cost(self) -> float:
        return self.records[0].J

    @property
    def final_cost(self) -> float:
        return self.final_state.J if self.final_state else self.records[-1].J

    @property
    def accepted_steps(self) -> int:
        return sum(1 for r in self.records if r.accepted)

    @property
    def final_sigma(self) -> float:
        if self.sigma_reductions:
            return self.sigma_reductions[-1].new
        return self.records[-1].sigma

    def accepted_costs(self) -> list[float]:
        return [self.records[0].J] + [r.J for r in self.records if r.accepted]


@dataclass(frozen=True, eq=False)
class OptState:
    mesh: TriMesh
    u_h: ScalarFieldP1
    p_h: ScalarFieldP1
    data: ProblemData
    tensors: ShapeTensors
    J: float
    iteration: int = 0
    sigma: float = float("nan")

    @property
    def u_d(self) -> ScalarFieldP1:
        """Target state on the target-fitted mesh, shared by every iterate."""
        return self.data.u_d


@dataclass
class LineSearchResult:
    success: bool
    t: float = 0.0
    mesh: TriMesh | None = None
    J: float = float("nan")
    trials: int = 0


def target_data(config: OptConfig) -> ProblemData:
    """Problem data carrying the run's fixed-in-space target state."""
    u_d = frozen_target(
        config.target_shape, config.data, config.n_interface, config.grid_res, config.cg_tol
    )
    return config.data.with_target(u_d)


def evaluate_state(
    mesh: TriMesh,
    config: OptConfig,
    iteration: int = 0,
    sigma: float = float("nan"),
    data: ProblemData | None = None,
) -> OptState:
    """State, adjoint, cost and tensors on one mesh.

    ``data`` must carry the target; it is solved from ``config`` when omitted.
    """
    if data is None:
        data = target_data(config)
    solver = TransmissionSolver(mesh, data, config.cg_tol)
    u_h = solver.state()
    p_h = solver.adjoint(u_h)
    tensors = assemble_tensors(mesh, u_h, p_h, data, tracking=solver.tracking)
    return OptState(mesh, u_h, p_h, data, tensors, solver.cost(u_h), iteration, sigma)


def trial_cost(mesh: TriMesh, data: ProblemData, cg_tol: float = DEFAULT_CG_TOL) -> float:
    """Cost of a candidate mesh, the functional dJ_vol differentiates."""
    return TrackingFunctional(data, cg_tol).evaluate(mesh)


def line_search(
    state: OptState,
    direction: VectorFieldP1,
    t0: float,
    config: OptConfig,
) -> LineSearchResult:
    """Backtracking along -direction until the mesh is valid and J strictly decreases.

    The first trial is t0 / max(|direction|_inf, 1e-12), then halved up to
    ``max_halvings`` trials in total.
    """
    t = t0 / max(direction.sup_norm(), 1e-12)
    for trial in range(1, config.max_halvings + 1):
        candidate = deform(state.mesh, -direction, t)
        report = validate(candidate, config.area_floor, config.angle_floor_deg)
        if not report.valid:
            logger.debug(f"trial {trial}: t={t:.3e} rejected, mesh invalid")
        else:
            J_new = trial_cost(candidate, state.data, config.cg_tol)
            if J_new < state.J:
                logger.debug(f"trial {trial}: t={t:.3e} accepted, J={J_new:.6e}")
                return LineSearchResult(True, t, candidate, J_new, trial)
            logger.debug(f"trial {trial}: t={t:.3e} no decrease (J={J_new:.6e})")
        t *= 0.5
    return LineSearchResult(False, trials=config.max_halvings)


def _initial(
    config: OptConfig, sigma: float, callback: IterationCallback | None
) -> tuple[OptState, OptHistory, float]:
    start = time.perf_counter()
    mesh = generate_mesh(config.initial_shape, config.n_interface, config.grid_res)
    state = evaluate_state(mesh, config, 0, sigma, target_data(config))
    history = OptHistory()
    record = IterationRecord(0, state.J, 0.0, sigma, 0.0, False)
    history.records.append(record)
    history.meshes[0] = mesh
    history.final_state = state
    logger.info(f"Initial cost J0={state.J:.6e} on {mesh.n_triangles} elements")
    if callback:
        callback(record, state)
    return state, history, start


def _direction(
    state: OptState, method: GradientMethod, config: OptConfig
) -> tuple[VectorFieldP1, float, bool]:
    """Gradient field, dJ(-g) and whether -g descends.

    A zero field counts as descending; its line search fails on its own.
    """
    direction = gradient_field(method, state.mesh, state.tensors, config.cg_tol)
    slope = descent_value(state.tensors, direction)
    descends = direction.sup_norm() == 0 or slope < 0
    if not descends:
        logger.warning(
            f"iteration {state.iteration}: direction is not a descent direction "
            f"(dJ(-g) = {slope:.3e})"
        )
    return direction, slope, descends


IterationCallback = Callable[[IterationRecord, OptState], None]


def _accept(
    history: OptHistory,
    result: LineSearchResult,
    state: OptState,
    config: OptConfig,
    n: int,
    sigma: float,
    grad_norm: float,
    elapsed: float,
    slope: float,
    callback: IterationCallback | None,
) -> OptState:
    state = evaluate_state(result.mesh, config, n + 1, sigma, state.data)
    record = IterationRecord(n + 1, state.J, result.t, sigma, grad_norm, True, elapsed, slope)
    history.records.append(record)
    history.meshes[n + 1] = state.mesh
    history.final_state = state
    logger.info(f"iteration {n + 1}: J={state.J:.6e} t={result.t:.3e} sigma={sigma:g}")
    if callback:
        callback(record, state)
    return state


def run_standard(
    config: OptConfig, callback: IterationCallback | None = None
) -> OptHistory:
    """Fixed-metric gradient descent with a sufficient-decrease stopping test."""
    sigma = config.sigma0 if config.method.kind.is_rkhs else float("nan")
    method = config.method.with_sigma(sigma) if config.method.kind.is_rkhs else config.method
    state, history, start = _initial(config, sigma, callback)
    reference_decrease: float | None = None

    for n in range(config.max_iter):
        direction, slope, descends = _direction(state, method, config)
        grad_norm = direction.sup_norm()
        if not descends:
            elapsed = time.perf_counter() - start
            history.records.append(
                IterationRecord(n + 1, state.J, 0.0, sigma, grad_norm, False, elapsed, slope)
            )
            history.termination = TerminationReason.NOT_DESCENT
            logger.info(f"iteration {n}: not a descent direction, stopping")
            break

        result = line_search(state, direction, config.t0, config)
        elapsed = time.perf_counter() - start
        if not result.success:
            history.records.append(
                IterationRecord(n + 1, state.J, 0.0, sigma, grad_norm, False, elapsed, slope)
            )
            history.termination = (
                TerminationReason.CONVERGED_AT_START
                if n == 0
                else TerminationReason.LINE_SEARCH_FAILED
            )
            logger.info(f"iteration {n}: line search failed, stopping")
            break

        decrease = state.J - result.J
        if reference_decrease is None:
            reference_decrease = decrease
        elif decrease < config.gamma * reference_decrease:
            history.records.append(
                IterationRecord(n + 1, result.J, result.t, sigma, grad_norm, False, elapsed, slope)
            )
            history.termination = TerminationReason.NO_SUFFICIENT_DECREASE
            logger.info(f"iteration {n}: no sufficient decrease, stopping")
            break

        state = _accept(
            history, result, state, config, n, sigma, grad_norm, elapsed, slope, callback
        )
    else:
        history.termination = TerminationReason.MAX_ITER

    return history


def run_variable_metric(
    config: OptConfig, callback: IterationCallback | None = None
) -> OptHistory:
    """RKHS gradient descent that shrinks sigma whenever an iteration fails.

    An iteration fails when -g is not a descent direction, when the line
    search finds no decrease, or when the decrease is insufficient.
    """
    if not config.method.kind.is_rkhs:
        raise ConfigError("variable metric runs need an RKHS method", key="method")
    sigma = config.sigma0
    state, history, start = _initial(config, sigma, callback)
    reference_decrease: float | None = None

    for n in range(config.max_iter):
        method = config.method.with_sigma(sigma)
        direction, slope, descends = _direction(state, method, config)
        grad_norm = direction.sup_norm()
        result = (
            line_search(state, direction, config.t0, config)
            if descends
            else LineSearchResult(False)
        )
        elapsed = time.perf_counter() - start

        cause = None
        if not descends:
            cause = "not_descent"
        elif not result.success:
            cause = "line_search_failed"
        else:
            decrease = state.J - result.J
            if reference_decrease is None:
                reference_decrease = decrease
            elif decrease < config.gamma * reference_decrease:
                cause = "no_sufficient_decrease"

        if cause is None:
            state = _accept(
                history, result, state, config, n, sigma, grad_norm, elapsed, slope, callback
            )
            continue

        J_trial = result.J if result.success else state.J
        history.records.append(
            IterationRecord(n + 1, J_trial, result.t, sigma, grad_norm, False, elapsed, slope)
        )
        new_sigma = config.q * sigma
        history.sigma_reductions.append(SigmaReduction(n + 1, sigma, new_sigma, cause))
        if cause == "no_sufficient_decrease":
            logger.info(
                f"iteration {n + 1}: insufficient decrease, sigma {sigma:g} -> {new_sigma:g}"
            )
        else:
            logger.warning(f"iteration {n + 1}: {cause}, sigma {sigma:g} -> {new_sigma:g}")
        sigma = new_sigma
        if sigma < config.sigma_min:
            history.termination = TerminationReason.SIGMA_FLOOR
            break
    else:
        history.termination = TerminationReason.MAX_ITER

    return history


def run(config: OptConfig, callback: IterationCallback | None = None) -> OptHistory:
    if config.algorithm is AlgorithmKind.VARIABLE_METRIC:
        return run_variable_metric(config, callback)
    return run_standard(config, callback)


def default_method(kind: str | GradientKind, sigma: float) -> GradientMethod:
    kind = GradientKind.parse(kind)
    return GradientMethod(kind, sigma if kind.is_rkhs else None)
