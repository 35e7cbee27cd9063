"""Plain CSV snapshots of cell fields: header ``x,z,value``, one row per cell."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh_ops import Mesh2D

__all__ = ["write_field_csv", "read_field_csv"]

HEADER = ["x", "z", "value"]


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_field_csv(field, mesh: Mesh2D, path) -> None:
    """Write a (nz, nx) cell field; rows run over layers k (outer) then cells i."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.nz, mesh.nx):
        raise ValueError(f"field shape {field.shape} does not match mesh {(mesh.nz, mesh.nx)}")
    path = Path(path)
    zc, xc = mesh.z_cell, mesh.x_cell
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HEADER)
            for k in range(mesh.nz):
                zk = _fmt(zc[k])
                writer.writerows([_fmt(xc[i]), zk, _fmt(field[k, i])] for i in range(mesh.nx))
    except OSError as exc:
        raise OSError(f"cannot write field to {path}: {exc.strerror or exc}") from exc


def read_field_csv(path, mesh: Mesh2D) -> np.ndarray:
    """Read a field written by ``write_field_csv`` back onto ``mesh``."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read field from {path}: {exc.strerror or exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise ValueError(f"{path}: expected header 'x,z,value'")
    body = rows[1:]
    if len(body) != mesh.nz * mesh.nx:
        raise ValueError(f"{path}: {len(body)} rows, mesh has {mesh.nz * mesh.nx} cells")
    data = np.array(body, dtype=float).reshape(mesh.nz, mesh.nx, 3)
    tol = 1e-9 * max(mesh.x_edge[-1], -mesh.z_interface[-1])
    if (np.abs(data[:, :, 0] - mesh.x_cell[None, :]).max() > tol
            or np.abs(data[:, :, 1] - mesh.z_cell[:, None]).max() > tol):
        raise ValueError(f"{path}: cell coordinates do not match the mesh")
    return data[:, :, 2].copy()
