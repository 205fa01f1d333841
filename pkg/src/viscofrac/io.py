"""File output: CSV tables, crack polylines, VTK snapshots and run manifests.

Floats are written with ``repr`` so equal runs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from importlib import metadata
from pathlib import Path

import numpy as np

from .driver import Evolution, Problem
from .energy import term_table
from .geometry import CrackPath
from .mesh import CrackedMesh

AUDIT_COLUMNS = ("interval", "index", "angle", "speed", "shape", "s_end", "residual",
                 "worst_relative", "score", "verdict", "chosen")


def _f(x) -> str:
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# Time series


def global_states(evolution: Evolution) -> list:
    """States of all windows in time order, window boundaries listed once."""
    out = []
    for i, traj in enumerate(evolution.trajectories):
        out.extend(traj.states if i == 0 else traj.states[1:])
    return out


def write_profile_csv(evolution: Evolution, path) -> None:
    """Crack length and speed at every step time."""
    times = np.array([st.t for st in global_states(evolution)])
    prof = evolution.profile
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("t", "s", "s_rate"))
        for t in times:
            w.writerow((_f(t), _f(prof(t)), _f(prof.derivative(t, 1))))


def write_trajectory_csv(evolution: Evolution, problem: Problem, path) -> None:
    """Energy and cumulative dissipation and work per step, restarted each window."""
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(("interval", "t", "s", "energy", "dissipation", "work"))
        for i, traj in enumerate(evolution.trajectories):
            tab = term_table(traj, problem.loads, problem.material, problem.history)
            for j in range(len(tab.t)):
                if i > 0 and j == 0:
                    continue
                w.writerow((i, _f(tab.t[j]), _f(evolution.profile(tab.t[j])), _f(tab.energy[j]),
                            _f(tab.dissipation(0, j)), _f(tab.work(0, j))))


def write_ledger_csv(evolution: Evolution, path) -> None:
    evolution.ledger.write_csv(path)


# ---------------------------------------------------------------------------
# Audit log


def audit_rows(evolution: Evolution) -> list[dict]:
    rows = []
    for rec in evolution.intervals:
        for res in rec.results:
            c = res.candidate
            verdict = "infeasible" if res.error else ("pass" if res.balanced else "fail")
            rows.append(dict(interval=rec.index, index=c.index, angle=c.angle, speed=c.speed,
                             shape=c.shape, s_end=c.s_end, residual=res.residual,
                             worst_relative=res.worst_relative, score=res.score, verdict=verdict,
                             chosen=int(c.index == rec.chosen.candidate.index)))
        for rej in rec.rejected:
            rows.append(dict(interval=rec.index, index=-1, angle=rej.angle, speed=rej.speed,
                             shape=rej.shape, s_end=math.nan, residual=math.nan,
                             worst_relative=math.nan, score=math.nan, verdict="rejected", chosen=0))
    return rows


def write_audit_csv(evolution: Evolution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(AUDIT_COLUMNS)
        for row in audit_rows(evolution):
            w.writerow([row[k] if k in ("interval", "index", "shape", "verdict", "chosen")
                        else _f(row[k]) for k in AUDIT_COLUMNS])


def read_audit_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({k: (int(v) if k in ("interval", "index", "chosen")
                        else v if k in ("shape", "verdict") else float(v))
                    for k, v in row.items()})
    return out


def rescore_audit(rows: list[dict], tol_bal: float) -> dict[int, dict]:
    """Winner per window re-derived from the logged residuals.

    A row passes when ``worst_relative <= tol_bal``; the winner maximizes
    ``(score, s_end, -|angle|)`` with log order breaking exact ties.
    """
    best: dict[int, dict] = {}
    for row in rows:
        if row["verdict"] in ("rejected", "infeasible"):
            continue
        if not row["worst_relative"] <= tol_bal:
            continue
        key = (row["score"], row["s_end"], -abs(row["angle"]))
        cur = best.get(row["interval"])
        if cur is None or key > (cur["score"], cur["s_end"], -abs(cur["angle"])):
            best[row["interval"]] = row
    return best


# ---------------------------------------------------------------------------
# Crack polyline


def write_crack(path: CrackPath, filename) -> None:
    """Polyline file: ``#`` header with ``a0 b_gamma r L``, then ``arc x y`` rows."""
    with open(filename, "w") as fh:
        fh.write("# a0 b_gamma r L\n")
        fh.write(f"# {_f(path.a0)} {_f(path.b)} {_f(path.r)} {_f(path.L)}\n")
        for s, (x, y) in zip(path.arcs, path.points):
            fh.write(f"{_f(s)} {_f(x)} {_f(y)}\n")


def read_crack(filename) -> CrackPath:
    lines = Path(filename).read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    if len(header) < 2:
        raise ValueError(f"{filename}: missing 'a0 b_gamma r L' header")
    a0, b, r, L = (float(x) for x in header[1].lstrip("#").split())
    rows = np.array([[float(x) for x in ln.split()] for ln in lines
                     if ln.strip() and not ln.startswith("#")])
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise ValueError(f"{filename}: rows must be 'arc x y'")
    if abs(rows[0, 0] - a0) > 1e-12 or abs(rows[-1, 0] - b) > 1e-12:
        raise ValueError(f"{filename}: header arcs do not match the rows")
    return CrackPath(rows[:, 0], rows[:, 1:], r, L)


# ---------------------------------------------------------------------------
# VTK


def write_vtk(filename, mesh: CrackedMesh, u: np.ndarray, v: np.ndarray, z: np.ndarray,
              title: str = "snapshot") -> None:
    """Legacy ASCII unstructured grid with nodal u, v and per-element memory."""
    n = mesh.n_nodes
    u2, v2 = u.reshape(n, 2), v.reshape(n, 2)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [f"{_f(x)} {_f(y)} 0.0" for x, y in mesh.nodes]
    ne = len(mesh.tris)
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.tris]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne
    lines.append(f"POINT_DATA {n}")
    for name, arr in (("displacement", u2), ("velocity", v2)):
        lines.append(f"VECTORS {name} double")
        lines += [f"{_f(a)} {_f(b)} 0.0" for a, b in arr]
    lines.append(f"CELL_DATA {ne}")
    for name, (i, j) in (("memory_11", (0, 0)), ("memory_22", (1, 1)), ("memory_12", (0, 1))):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_f(x) for x in z[:, i, j]]
    Path(filename).write_text("\n".join(lines) + "\n")


def write_snapshots(evolution: Evolution, directory, stride: int) -> list[Path]:
    """One VTK file every ``stride`` global steps, starting with the initial state."""
    if stride <= 0:
        return []
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for k, st in enumerate(global_states(evolution)):
        if k % stride == 0:
            name = d / f"snapshot_{k:06d}.vtk"
            write_vtk(name, st.mesh, st.u, st.v, st.z, f"t = {_f(st.t)}")
            out.append(name)
    return out


# ---------------------------------------------------------------------------
# Manifest and errors


def package_versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for name in ("viscofrac", "numpy", "scipy", "shapely", "triangle"):
        try:
            out[name] = metadata.version("artifact" if name == "viscofrac" else name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


def write_manifest(filename, scenario_text: str, digest: str, resolved: dict,
                   timings: dict, outputs: list[str], status: str) -> None:
    data = {"status": status, "config_sha256": digest, "versions": package_versions(),
            "timings_seconds": timings, "outputs": outputs, "resolved": resolved,
            "scenario": scenario_text}
    Path(filename).write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def write_error(filename, kind: str, message: str, exit_code: int) -> None:
    data = {"error": kind, "message": message, "exit_code": exit_code}
    Path(filename).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
