import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

SYSTEMS = ("sys1", "sys2", "both")
SECTIONS = ("theta", "zero")
PREDICTORS = ("trivial", "secant")


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and step control shared by the Newton and path solvers."""

    newton_tol: float = 1e-10
    max_newton: int = 30
    dt0: float = 0.02
    dt_min: float = 1e-4
    damping: float = 1.0
    compat_tol: float = 1e-8
    sigma_min_tol: float = 1e-8
    report_tol: float = 1e-9
    grad_tol: float = 1e-6
    gmres_rtol: float = 1e-12
    gmres_maxiter: int = 400
    ds0: float = 0.25
    predictor: str = "trivial"
    epsilon_min: float = 1.0
    alpha_max: float = 64.0
    lap_psi_buffer: float = 0.5
    max_restarts: int = 3
    dense_max_n: int = 24
    check_jacobian: bool = True

    def __post_init__(self):
        for name in (
            "newton_tol",
            "dt0",
            "dt_min",
            "damping",
            "compat_tol",
            "sigma_min_tol",
            "report_tol",
            "grad_tol",
            "gmres_rtol",
            "ds0",
            "epsilon_min",
            "alpha_max",
        ):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", key=name)
        for name in ("max_newton", "gmres_maxiter", "dense_max_n"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1", key=name)
        if self.max_restarts < 0:
            raise ConfigError("max_restarts must be non-negative", key="max_restarts")
        if self.lap_psi_buffer < 0:
            raise ConfigError(
                "lap_psi_buffer must be non-negative", key="lap_psi_buffer"
            )
        if self.dt_min > self.dt0:
            raise ConfigError("dt_min must not exceed dt0", key="dt_min")
        if self.damping > 1.0:
            raise ConfigError("damping must be in (0, 1]", key="damping")
        if self.predictor not in PREDICTORS:
            raise ConfigError(
                f"predictor must be one of {', '.join(PREDICTORS)}", key="predictor"
            )


@dataclass(frozen=True)
class RunConfig:
    """One run of the harness: which system, which grid, which constants."""

    system: str = "sys1"
    n: int = 64
    r1: int = 1
    r2: int = 1
    deg_l: int = 1
    alpha: Optional[float] = None  # None means calibrate
    epsilon: Optional[float] = None
    section: str = "theta"
    output_dir: str = "./out"
    seed: int = 0
    n_samples: int = 64
    snapshot_times: Tuple[float, ...] = (0.0, 1.0)
    sigma_states: int = 5
    record_timings: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(
                f"system must be one of {', '.join(SYSTEMS)}", key="system"
            )
        if self.n < 16 or self.n % 2:
            raise ConfigError("n must be an even integer >= 16", key="n")
        if self.r1 < 1:
            raise ConfigError("r1 must be a positive integer", key="r1")
        if self.r2 < 1:
            raise ConfigError("r2 must be a positive integer", key="r2")
        if self.deg_l != 1:
            raise ConfigError("only deg_l = 1 is supported", key="deg_l")
        if self.alpha is not None and self.alpha < 0:
            raise ConfigError("fixed alpha must be >= 0", key="alpha")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("fixed epsilon must be > 0", key="epsilon")
        if self.section not in SECTIONS:
            raise ConfigError(
                f"section must be one of {', '.join(SECTIONS)}", key="section"
            )
        if self.n_samples < 1:
            raise ConfigError("n_samples must be at least 1", key="n_samples")
        if self.sigma_states < 0:
            raise ConfigError("sigma_states must be non-negative", key="sigma_states")
        if any(not 0.0 <= t <= 1.0 for t in self.snapshot_times):
            raise ConfigError("snapshot_times must lie in [0, 1]", key="snapshot_times")

    @property
    def systems(self) -> List[str]:
        return ["sys1", "sys2"] if self.system == "both" else [self.system]

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with top-level or solver keys replaced."""
        solver_keys = {f.name for f in fields(SolverConfig)}
        solver_changes = {k: v for k, v in changes.items() if k in solver_keys}
        run_changes = {k: v for k, v in changes.items() if k not in solver_keys}
        solver = replace(self.solver, **solver_changes) if solver_changes else self.solver
        return replace(self, solver=solver, **run_changes)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["alpha"] = "auto" if self.alpha is None else self.alpha
        data["epsilon"] = "auto" if self.epsilon is None else self.epsilon
        data["snapshot_times"] = list(self.snapshot_times)
        return data


_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"solver"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
_INT_KEYS = {
    "n",
    "r1",
    "r2",
    "deg_l",
    "seed",
    "n_samples",
    "sigma_states",
    "max_newton",
    "gmres_maxiter",
    "max_restarts",
    "dense_max_n",
}
_BOOL_KEYS = {"record_timings", "check_jacobian"}
_STR_KEYS = {"system", "section", "output_dir", "predictor"}


def _numeric(raw: Any) -> Any:
    # YAML 1.1 reads exponent-only floats such as 1e-10 as strings
    if isinstance(raw, str):
        try:
            value = float(raw)
        except ValueError:
            return raw
        return value if math.isfinite(value) else raw
    return raw


def _coerce(key: str, raw: Any, line: Optional[int]) -> Any:
    """Coerce a parsed value to the type its key expects."""
    if key in ("alpha", "epsilon"):
        if isinstance(raw, str) and raw.strip().lower() == "auto":
            return None
        raw = _numeric(raw)
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{key} must be 'auto' or a number", line, key)
        return float(raw)
    if key == "snapshot_times":
        values = raw if isinstance(raw, (list, tuple)) else [raw]
        try:
            return tuple(sorted(float(v) for v in values))
        except (TypeError, ValueError):
            raise ConfigError("snapshot_times must be a list of numbers", line, key)
    if key in _BOOL_KEYS:
        if not isinstance(raw, bool):
            raise ConfigError(f"{key} must be true or false", line, key)
        return raw
    if key in _INT_KEYS:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{key} must be an integer", line, key)
        return raw
    if key in _STR_KEYS:
        return str(raw)
    raw = _numeric(raw)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ConfigError(f"{key} must be a number", line, key)
    return float(raw)


def _parse_value(text: str, line: int, key: str) -> Any:
    try:
        return yaml.safe_load(text) if text else None
    except yaml.YAMLError as e:
        raise ConfigError(f"unreadable value for {key}: {e}", line, key)


def _key_value_pairs(text: str) -> List[Tuple[int, str, Any]]:
    pairs = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        stripped = raw_line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", lineno)
        pairs.append((lineno, key, _parse_value(value, lineno, key)))
    return pairs


def _yaml_pairs(text: str) -> List[Tuple[int, str, Any]]:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML format: {e}")
    if doc is None:
        return []
    if not isinstance(doc, dict):
        raise ConfigError("configuration document must be a mapping")
    return [(None, str(key), value) for key, value in doc.items()]


def _looks_like_yaml(text: str) -> bool:
    for raw_line in text.splitlines():
        stripped = raw_line.split("#", 1)[0].strip()
        if stripped:
            return "=" not in stripped and ":" in stripped
    return False


def parse_config(text: str) -> RunConfig:
    """Parse a key = value (or YAML mapping) document into a validated RunConfig."""
    pairs = _yaml_pairs(text) if _looks_like_yaml(text) else _key_value_pairs(text)
    config = _build_config(pairs)
    logger.debug(f"Parsed configuration: {config.to_dict()}")
    return config


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Rebuild a RunConfig from RunConfig.to_dict() output (solver keys nested or flat)."""
    flat = {k: v for k, v in data.items() if k != "solver"}
    flat.update(data.get("solver") or {})
    return _build_config([(None, key, value) for key, value in flat.items()])


def _build_config(pairs: List[Tuple[Optional[int], str, Any]]) -> RunConfig:
    run_values: Dict[str, Any] = {}
    solver_values: Dict[str, Any] = {}
    seen = set()
    last_line = None
    for line, key, raw in pairs:
        last_line = line
        if key in seen:
            raise ConfigError(f"duplicate key {key}", line, key)
        seen.add(key)
        if raw is None:
            raise ConfigError(f"missing value for {key}", line, key)
        if key in _RUN_KEYS:
            run_values[key] = _coerce(key, raw, line)
        elif key in _SOLVER_KEYS:
            solver_values[key] = _coerce(key, raw, line)
        else:
            raise ConfigError(f"unknown key {key}", line, key)

    try:
        solver = SolverConfig(**solver_values)
        config = RunConfig(solver=solver, **run_values)
    except ConfigError as e:
        line = next((ln for ln, k, _ in pairs if k == e.key), last_line)
        raise ConfigError(str(e.message), line, e.key)
    return config


def load_config(path: Optional[str]) -> RunConfig:
    """Read and parse a configuration file; no path means all defaults."""
    if not path:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            content = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}")
    return parse_config(content)
