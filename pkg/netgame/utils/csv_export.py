import csv
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from netgame.models.schemas import BestResponseCurve, NashResult, SweepRow, TrajectoryLog


def _fmt(value) -> str:
    # repr of a Python float is the shortest round-tripping form, so files are byte-stable
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write rows with a fixed header; lines end in \\n on every platform."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _vector_columns(name: str, width: int) -> List[str]:
    return [f"{name}_{i}" for i in range(width)]


def trajectory_header(log: TrajectoryLog) -> List[str]:
    header = ["time"]
    for name in ("x", "xhat1", "xhat2", "e1", "e2", "u1", "u2"):
        header += _vector_columns(name, getattr(log, name).shape[1])
    return header + ["gamma1", "gamma2"]


def write_trajectory(path: Path, log: TrajectoryLog) -> Path:
    """Columns: time, x_0.., xhat1_0.., xhat2_0.., e1_0.., e2_0.., u1_0.., u2_0.., gamma1, gamma2."""
    body = np.hstack(
        [log.times[:, None], log.x, log.xhat1, log.xhat2, log.e1, log.e2, log.u1, log.u2]
    )
    rows = (list(body[k]) + [int(log.gamma1[k]), int(log.gamma2[k])] for k in range(body.shape[0]))
    return write_csv(path, trajectory_header(log), rows)


def write_curve(path: Path, curve: BestResponseCurve) -> Path:
    """Columns: opponent, response."""
    return write_csv(path, ["opponent", "response"], zip(curve.grid, curve.responses))


def write_trace(path: Path, result: NashResult) -> Path:
    """Columns: iteration, p, q."""
    return write_csv(path, ["iteration", "p", "q"], ((k, p, q) for k, (p, q) in enumerate(result.trace)))


def write_sweep(path: Path, rows: Sequence[SweepRow]) -> Path:
    """Columns: lambda11, lambda22, p_star, q_star, converged, iterations."""
    return write_csv(
        path,
        ["lambda11", "lambda22", "p_star", "q_star", "converged", "iterations"],
        ((r.lambda11, r.lambda22, r.p_star, r.q_star, r.converged, r.iterations) for r in rows),
    )
