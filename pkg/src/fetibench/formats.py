"""
Text formats for density grids and problem descriptions.

Density grid (``.rho``)::

    nx ny
    rho(0, 0) rho(1, 0) ... rho(nx-1, 0)
    ...
    rho(0, ny-1) ...

One line per element row, row 0 at the bottom of the domain (row-major order).

Problem file (``.problem``) is JSON with the keys ``name``, ``sx``, ``sy``,
``ex``, ``ey``, ``size``, ``contrast``, ``material``, ``module_types``,
``dirichlet``, ``tractions``, ``point_loads``, ``meta`` and ``density_file``
(path of the global density grid, relative to the problem file).
"""
import json
from pathlib import Path

import numpy as np

from .errors import IoError
from .fem import Material
from .problems import ProblemSpec


def write_density_grid(path, rho):
    """Write an ``(ny, nx)`` density array."""
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    ny, nx = rho.shape
    try:
        with open(path, "w") as fh:
            fh.write(f"{nx} {ny}\n")
            np.savetxt(fh, rho, fmt="%.17g")
    except OSError as exc:
        raise IoError(f"cannot write density grid {path}: {exc}") from exc


def read_density_grid(path):
    """Read a density grid; returns an ``(ny, nx)`` array."""
    try:
        with open(path) as fh:
            header = fh.readline().split()
            values = np.loadtxt(fh, ndmin=2)
    except OSError as exc:
        raise IoError(f"cannot read density grid {path}: {exc}") from exc
    if len(header) != 2:
        raise IoError(f"{path}: header must be 'nx ny'")
    nx, ny = int(header[0]), int(header[1])
    if values.size != nx * ny:
        raise IoError(f"{path}: expected {nx * ny} values, found {values.size}")
    rho = values.reshape(ny, nx)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise IoError(f"{path}: densities outside [0, 1]")
    return rho


def problem_to_dict(problem, density_file):
    return {
        "name": problem.name,
        "sx": problem.sx, "sy": problem.sy, "ex": problem.ex, "ey": problem.ey,
        "size": problem.size,
        "contrast": problem.contrast,
        "material": problem.material.to_dict(),
        "module_types": [int(t) for t in problem.module_types],
        "dirichlet": [[int(n), int(d), float(v)] for n, d, v in problem.dirichlet],
        "tractions": [[int(s), e, [float(t) for t in tr]] for s, e, tr in problem.tractions],
        "point_loads": [[int(n), int(d), float(v)] for n, d, v in problem.point_loads],
        "meta": problem.meta,
        "density_file": str(density_file),
    }


def write_problem(path, problem):
    """Write ``path`` and the density grid next to it (same stem, ``.rho``)."""
    path = Path(path)
    rho_path = path.with_suffix(".rho")
    write_density_grid(rho_path, problem.global_density())
    try:
        path.write_text(json.dumps(problem_to_dict(problem, rho_path.name), indent=2))
    except OSError as exc:
        raise IoError(f"cannot write problem file {path}: {exc}") from exc
    return path, rho_path


def read_problem(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read problem file {path}: {exc}") from exc
    sx, sy, ex, ey = data["sx"], data["sy"], data["ex"], data["ey"]
    grid = read_density_grid(path.parent / data["density_file"])
    if grid.shape != (sy * ey, sx * ex):
        raise IoError(f"{path}: density grid shape {grid.shape} does not match the partition")
    dens = [grid[(s // sx) * ey:(s // sx + 1) * ey, (s % sx) * ex:(s % sx + 1) * ex].copy()
            for s in range(sx * sy)]
    return ProblemSpec(
        data["name"], sx, sy, ex, ey, Material(**data["material"]), dens,
        np.asarray(data["module_types"], dtype=np.int64),
        [(n, d, v) for n, d, v in data["dirichlet"]],
        [(s, e, tuple(t)) for s, e, t in data["tractions"]],
        [(n, d, v) for n, d, v in data["point_loads"]],
        data["contrast"], data["size"], data.get("meta", {}))


def write_snapshot(directory, iteration, problem):
    """``snapshot_<iteration>.problem`` plus ``snapshot_<iteration>.rho`` in ``directory``."""
    return write_problem(Path(directory) / f"snapshot_{int(iteration)}.problem", problem)
