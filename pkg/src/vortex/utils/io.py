import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..geometry.torus import ScalarField, TorusGrid, interpolate
from .errors import IncompatibleRuns, StudyError, VortexError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACE_COLUMNS = [
    "t",
    "dt",
    "newton_iterations",
    "residual_f",
    "residual_psi",
    "kappa",
    "psi_min",
    "psi_max",
    "lap_psi_min",
    "lap_psi_max",
    "lap_f_min",
    "lap_f_max",
    "phig2_max",
    "branch_margin",
    "det_min",
    "a0_residual_min",
]
# keys allowed to differ between two compared runs
COMPARABLE_KEYS = ("epsilon", "n")
IGNORED_KEYS = ("output_dir", "record_timings", "sigma_states")


def to_jsonable(x: Any) -> Any:
    """Convert numpy scalars, arrays and non-finite floats to JSON-safe values."""
    if isinstance(x, bool) or x is None or isinstance(x, (str, int)):
        return x
    if isinstance(x, (float, np.floating)):
        value = float(x)
        return value if math.isfinite(value) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    return str(x)


def write_json(path: Path, payload: Dict[str, Any]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: Path) -> Dict[str, Any]:
    try:
        with Path(path).open("r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise StudyError(f"cannot read {path}: {e}", {"path": str(path)})


def snapshot_name(t: float, which: str) -> str:
    return f"fields_{t:.4f}_{which}.csv"


def write_field(path: Path, field: ScalarField):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, field.values, delimiter=",", fmt="%.17g")


def read_field(path: Path, grid: Optional[TorusGrid] = None) -> ScalarField:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as e:
        raise StudyError(f"cannot read field {path}: {e}", {"path": str(path)})
    if grid is None:
        grid = TorusGrid(values.shape[0])
    return ScalarField(grid, values)


def write_snapshot(output_dir: Path, t: float, f: ScalarField, psi: ScalarField):
    output_dir = Path(output_dir)
    write_field(output_dir / snapshot_name(t, "f"), f)
    write_field(output_dir / snapshot_name(t, "psi"), psi)


def read_snapshot(
    output_dir: Path, t: float, grid: Optional[TorusGrid] = None
) -> Tuple[ScalarField, ScalarField]:
    output_dir = Path(output_dir)
    f = read_field(output_dir / snapshot_name(t, "f"), grid)
    psi = read_field(output_dir / snapshot_name(t, "psi"), f.grid)
    return f, psi


def trace_columns(rows: List[Any], record_timings: bool) -> List[str]:
    margin_names = list(rows[0].margins) if rows else []
    columns = TRACE_COLUMNS + [f"margin_{name}" for name in margin_names]
    if record_timings:
        columns.append("wall_time")
    return columns


def write_trace(path: Path, rows: List[Any], record_timings: bool = True):
    """One CSV row per accepted step, columns in TRACE_COLUMNS order then margins."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = trace_columns(rows, record_timings)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            record = {name: getattr(row, name) for name in TRACE_COLUMNS}
            record.update({f"margin_{k}": v for k, v in row.margins.items()})
            if record_timings:
                record["wall_time"] = row.wall_time
            writer.writerow(
                {k: ("" if v is None else repr(float(v))) for k, v in record.items()}
            )
    logger.debug(f"Wrote {len(rows)} trace rows to {path}")


def read_trace(path: Path) -> List[Dict[str, Optional[float]]]:
    with Path(path).open("r", newline="", encoding="utf-8") as f:
        return [
            {k: (float(v) if v != "" else None) for k, v in row.items()}
            for row in csv.DictReader(f)
        ]


def failure_record(error: BaseException) -> Dict[str, Any]:
    if isinstance(error, VortexError):
        return error.to_record()
    return {
        "error": type(error).__name__,
        "module": type(error).__module__,
        "message": str(error),
        "details": {},
    }


def write_failure(output_dir: Path, error: BaseException) -> Path:
    path = Path(output_dir) / "failure.json"
    record = failure_record(error)
    record["schema_version"] = SCHEMA_VERSION
    write_json(path, record)
    return path


def _ratio(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    if a == b:
        return 1.0
    if a == 0:
        return None
    return b / a


def _comparable_config(summary: Dict[str, Any]) -> Dict[str, Any]:
    config = dict(summary.get("config", {}))
    for key in IGNORED_KEYS:
        config.pop(key, None)
    run = summary.get("run", {})
    if "epsilon" in run:
        config["epsilon"] = run["epsilon"]
    return config


def export_comparison(run_a: Path, run_b: Path) -> Dict[str, Any]:
    """Epsilon-independence and refinement comparison of two finished runs."""
    summary_a = read_json(Path(run_a) / "summary.json")
    summary_b = read_json(Path(run_b) / "summary.json")
    config_a = _comparable_config(summary_a)
    config_b = _comparable_config(summary_b)
    differing = sorted(
        key
        for key in set(config_a) | set(config_b)
        if config_a.get(key) != config_b.get(key)
    )
    if len(differing) > 1 or (differing and differing[0] not in COMPARABLE_KEYS):
        raise IncompatibleRuns(
            f"runs differ in {', '.join(differing)}", {"differing": differing}
        )
    key = differing[0] if differing else None

    run_a_data = summary_a.get("run", {})
    run_b_data = summary_b.get("run", {})
    report: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "run_a": str(run_a),
        "run_b": str(run_b),
        "compared_key": key,
        "values": {
            "a": config_a.get(key) if key else None,
            "b": config_b.get(key) if key else None,
        },
        "eps_psi0_ratio": _ratio(
            run_a_data.get("t0", {}).get("eps_psi_sup"),
            run_b_data.get("t0", {}).get("eps_psi_sup"),
        ),
        "path_sup_lap_psi_ratio": _ratio(
            run_a_data.get("path_sup", {}).get("sup_lap_psi"),
            run_b_data.get("path_sup", {}).get("sup_lap_psi"),
        ),
    }

    if key in (None, "n"):
        report["refinement"] = refinement_difference(run_a, run_b)
    logger.info(f"Comparison of {run_a} and {run_b}: key={key}")
    return report


def refinement_difference(run_a: Path, run_b: Path, t: float = 1.0) -> Dict[str, float]:
    """Sup difference of the endpoint fields after interpolating onto the finer grid."""
    fa, pa = read_snapshot(run_a, t)
    fb, pb = read_snapshot(run_b, t)
    n = max(fa.grid.n, fb.grid.n)
    diff = {}
    for name, a, b in (("f", fa, fb), ("psi", pa, pb)):
        diff[f"sup_diff_{name}"] = (interpolate(a, n) - interpolate(b, n)).sup()
    return diff
