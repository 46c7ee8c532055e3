"""YAML run configuration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .exceptions import ConfigError
from .fem import DEFAULT_CG_TOL, ProblemData
from .gradients import GradientKind, GradientMethod
from .mesh import ShapeSpec
from .optimizer import AlgorithmKind, OptConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).with_name("default_config.yaml")
RESOLVED_CONFIG_NAME = "config.resolved.yaml"


@dataclass
class RunConfig:
    """Everything one experiment needs, as read from a YAML file."""

    algorithm: str = "variable_metric"
    method: str = "rkhs_gauss"
    sigma0: float = 10.0
    gamma: float = 1e-2
    q: float = 0.5
    max_iter: int = 500
    t0: float = 1.0
    max_halvings: int = 30
    sigma_min: float = 1e-4
    h1_seminorm: bool = False
    beta_plus: float = 1.0
    beta_minus: float = 0.5
    f: float = 1.0
    initial_shape: ShapeSpec = field(default_factory=ShapeSpec)
    target_shape: ShapeSpec = field(default_factory=ShapeSpec)
    grid_res: int = 21
    n_interface: int = 100
    output_dir: str = "results"
    # accepted iterations only, the final state is always written
    snapshot_every: int = 10
    cg_tol: float = DEFAULT_CG_TOL
    seed: int = 0
    area_floor: float = 1e-12
    angle_floor_deg: float = 5.0
    derivative_threshold: float = 1e-2

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        """Build and validate a config; unknown keys are rejected by name."""
        known = {f.name: f for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown configuration key '{key}'", key=key)

        values: dict[str, Any] = {}
        for key, raw in data.items():
            default = getattr(cls, key, None)
            if key in ("initial_shape", "target_shape"):
                values[key] = _parse_shape(key, raw)
            elif isinstance(default, bool):
                if not isinstance(raw, bool):
                    raise ConfigError(f"{key} must be true or false, got {raw!r}", key=key)
                values[key] = raw
            elif isinstance(default, int):
                values[key] = _coerce(key, raw, int)
            elif isinstance(default, float):
                values[key] = _coerce(key, raw, float)
            else:
                values[key] = str(raw)

        config = cls(**values)
        config.validate()
        return config

    def to_dict(self) -> dict[str, Any]:
        result: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            result[f.name] = value.to_dict() if isinstance(value, ShapeSpec) else value
        return result

    def validate(self) -> None:
        if self.grid_res < 4:
            raise ConfigError(f"grid_res must be at least 4, got {self.grid_res}", key="grid_res")
        if self.n_interface < 8:
            raise ConfigError(
                f"n_interface must be at least 8, got {self.n_interface}", key="n_interface"
            )
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be non-negative", key="snapshot_every")
        if not self.cg_tol > 0:
            raise ConfigError(f"cg_tol must be positive, got {self.cg_tol}", key="cg_tol")
        if not self.derivative_threshold > 0:
            raise ConfigError(
                "derivative_threshold must be positive", key="derivative_threshold"
            )
        if not self.initial_shape.discs:
            raise ConfigError("initial_shape needs at least one disc", key="initial_shape")
        self.opt_config()

    def gradient_method(self) -> GradientMethod:
        kind = GradientKind.parse(self.method)
        return GradientMethod(
            kind, self.sigma0 if kind.is_rkhs else None, self.h1_seminorm
        )

    def problem_data(self) -> ProblemData:
        try:
            return ProblemData(self.beta_plus, self.beta_minus, self.f)
        except ValueError as e:
            raise ConfigError(str(e), key="beta_plus") from e

    def opt_config(self) -> OptConfig:
        """Project onto the optimizer's configuration."""
        try:
            algorithm = AlgorithmKind(self.algorithm)
        except ValueError:
            options = ", ".join(kind.value for kind in AlgorithmKind)
            raise ConfigError(
                f"unknown algorithm '{self.algorithm}'; valid options: {options}",
                key="algorithm",
            ) from None
        return OptConfig(
            method=self.gradient_method(),
            algorithm=algorithm,
            sigma0=self.sigma0,
            gamma=self.gamma,
            q=self.q,
            max_iter=self.max_iter,
            t0=self.t0,
            max_halvings=self.max_halvings,
            sigma_min=self.sigma_min,
            data=self.problem_data(),
            initial_shape=self.initial_shape,
            target_shape=self.target_shape,
            grid_res=self.grid_res,
            n_interface=self.n_interface,
            cg_tol=self.cg_tol,
            area_floor=self.area_floor,
            angle_floor_deg=self.angle_floor_deg,
        )


def _coerce(key: str, raw: Any, kind: type) -> Any:
    if isinstance(raw, bool):
        raise ConfigError(f"{key} must be a number, got {raw!r}", key=key)
    try:
        value = kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be {kind.__name__}, got {raw!r}", key=key) from None
    if kind is int and isinstance(raw, float) and raw != value:
        raise ConfigError(f"{key} must be an integer, got {raw!r}", key=key)
    return value


def _parse_shape(key: str, raw: Any) -> ShapeSpec:
    if not isinstance(raw, list):
        raise ConfigError(f"{key} must be a list of discs", key=key)
    try:
        shape = ShapeSpec.from_dict(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(
            f"{key}: every disc needs 'center: [x, y]' and 'radius' ({e})", key=key
        ) from None
    shape.validate()
    return shape


def _read_yaml(path: Path) -> dict[str, Any]:
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        if mark is not None:
            line, column = mark.line + 1, mark.column + 1
            raise ConfigError(
                f"{path}:{line}:{column}: {getattr(e, 'problem', e)}",
                line=line,
                column=column,
            ) from None
        raise ConfigError(f"{path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def default_settings() -> dict[str, Any]:
    return _read_yaml(DEFAULT_CONFIG_PATH)


def load_config(path: str | Path | None = None, **overrides: Any) -> RunConfig:
    """Load a run configuration merged over the packaged defaults.

    Raises:
        ConfigError: On YAML syntax errors, unknown keys or invalid values.
        OSError: If ``path`` cannot be read.
    """
    settings = default_settings()
    if path is not None:
        user = _read_yaml(Path(path))
        logger.debug(f"Loaded {len(user)} settings from {path}")
        settings.update(user)
    settings.update(overrides)
    return RunConfig.from_dict(settings)


def save_config(config: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
    return path
