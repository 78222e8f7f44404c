"""Legacy-VTK (ASCII) and CSV writers plus matching readers.

Fields go out as structured points, cell surfaces as polydata, scalar
reports as CSV with a header row. Every file's title line names the units
of the stored quantities. Floats are written with enough digits to
round-trip exactly.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import StorageError

_FMT = "%.17g"


def _open_write(path):
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def _fail(path, reason):
    raise StorageError(f"{path} is not a readable VTK file: {reason}")


def write_structured_points(path, arrays, origin=(0.0, 0.0, 0.0),
                            spacing=(1.0, 1.0, 1.0), units="lattice units"):
    """Write scalar/vector node fields on a regular grid.

    ``arrays`` maps a name to an (nx, ny, nz) scalar or (nx, ny, nz, 3)
    vector array; all entries must share the same grid shape.
    """
    if not arrays:
        raise StorageError(f"refusing to write {path} with no arrays")
    shapes = {np.asarray(a).shape[:3] for a in arrays.values()}
    if len(shapes) != 1:
        raise StorageError(f"field arrays for {path} disagree on grid shape")
    nx, ny, nz = shapes.pop()
    with _open_write(path) as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"cellflow fields, units: {units}\n")
        fh.write("ASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write("ORIGIN %s %s %s\n" % tuple(_FMT % v for v in origin))
        fh.write("SPACING %s %s %s\n" % tuple(_FMT % v for v in spacing))
        fh.write(f"POINT_DATA {nx * ny * nz}\n")
        for name, array in arrays.items():
            array = np.asarray(array, dtype=np.float64)
            if array.ndim == 3:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                flat = array.reshape(-1, order="F")
                np.savetxt(fh, flat[:, None], fmt=_FMT)
            elif array.ndim == 4 and array.shape[3] == 3:
                fh.write(f"VECTORS {name} double\n")
                flat = array.reshape(-1, 3, order="F")
                np.savetxt(fh, flat, fmt=_FMT)
            else:
                raise StorageError(
                    f"array '{name}' must be a scalar or 3-vector node field"
                )


def read_structured_points(path):
    """Read back a structured-points file; returns (arrays, origin, spacing, title)."""
    try:
        with open(path, "r") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(lines) < 8 or not lines[0].startswith("# vtk DataFile"):
        _fail(path, "missing VTK header")
    title = lines[1]
    if lines[2].strip() != "ASCII" or lines[3].strip() != "DATASET STRUCTURED_POINTS":
        _fail(path, "not an ASCII structured-points dataset")
    try:
        dims = tuple(int(v) for v in lines[4].split()[1:4])
        origin = tuple(float(v) for v in lines[5].split()[1:4])
        spacing = tuple(float(v) for v in lines[6].split()[1:4])
        count = int(lines[7].split()[1])
    except (ValueError, IndexError):
        _fail(path, "malformed geometry header")
    if count != dims[0] * dims[1] * dims[2]:
        _fail(path, "POINT_DATA count does not match DIMENSIONS")

    arrays = {}
    at = 8
    while at < len(lines):
        head = lines[at].split()
        if not head:
            at += 1
            continue
        if head[0] == "SCALARS":
            name = head[1]
            values, at = _read_floats(path, lines, at + 2, count, 1)
            arrays[name] = values.reshape(dims, order="F")
        elif head[0] == "VECTORS":
            name = head[1]
            values, at = _read_floats(path, lines, at + 1, count, 3)
            arrays[name] = values.reshape(dims + (3,), order="F")
        else:
            _fail(path, f"unexpected section '{lines[at]}'")
    return arrays, origin, spacing, title


def _read_floats(path, lines, start, rows, width):
    out = np.empty((rows, width))
    have = 0
    at = start
    while have < rows:
        if at >= len(lines):
            _fail(path, "file ends inside a data section")
        parts = lines[at].split()
        if len(parts) != width:
            _fail(path, f"expected {width} values per line at line {at + 1}")
        try:
            out[have] = [float(p) for p in parts]
        except ValueError:
            _fail(path, f"non-numeric data at line {at + 1}")
        have += 1
        at += 1
    return (out[:, 0] if width == 1 else out), at


def write_cell_surfaces(path, meshes, units="lattice units"):
    """All cell membranes as one polydata file with a per-point cell index."""
    positions = (
        np.concatenate([m.positions for m in meshes])
        if meshes else np.empty((0, 3))
    )
    with _open_write(path) as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"cellflow cell surfaces, units: {units}\n")
        fh.write("ASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(positions)} double\n")
        np.savetxt(fh, positions, fmt=_FMT)
        n_tri = sum(len(m.triangles) for m in meshes)
        fh.write(f"POLYGONS {n_tri} {4 * n_tri}\n")
        offset = 0
        for mesh in meshes:
            np.savetxt(
                fh,
                np.hstack([
                    np.full((len(mesh.triangles), 1), 3, dtype=np.int64),
                    mesh.triangles + offset,
                ]),
                fmt="%d",
            )
            offset += mesh.n_vertices
        fh.write(f"POINT_DATA {len(positions)}\n")
        fh.write("SCALARS cell_index int 1\nLOOKUP_TABLE default\n")
        for k, mesh in enumerate(meshes):
            np.savetxt(fh, np.full((mesh.n_vertices, 1), k, dtype=np.int64), fmt="%d")


def read_cell_surfaces(path):
    """Returns (positions, triangles, per-point cell index) from polydata."""
    try:
        with open(path, "r") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(lines) < 5 or not lines[0].startswith("# vtk DataFile"):
        _fail(path, "missing VTK header")
    if lines[3].strip() != "DATASET POLYDATA":
        _fail(path, "not a polydata dataset")
    try:
        n_points = int(lines[4].split()[1])
    except (ValueError, IndexError):
        _fail(path, "malformed POINTS header")
    points, at = _read_floats(path, lines, 5, n_points, 3)
    head = lines[at].split()
    if not head or head[0] != "POLYGONS":
        _fail(path, "missing POLYGONS section")
    n_tri = int(head[1])
    triangles = np.empty((n_tri, 3), dtype=np.int64)
    for k in range(n_tri):
        parts = lines[at + 1 + k].split()
        if len(parts) != 4 or parts[0] != "3":
            _fail(path, f"polygon {k} is not a triangle")
        triangles[k] = [int(p) for p in parts[1:]]
    at += 1 + n_tri
    cell_index = np.zeros(n_points, dtype=np.int64)
    if at < len(lines) and lines[at].startswith("POINT_DATA"):
        values, _ = _read_floats(path, lines, at + 3, n_points, 1)
        cell_index = values.astype(np.int64)
    return points, triangles, cell_index


def write_csv_report(path, names, columns):
    """Plain CSV: one header row, then the column data."""
    columns = [np.atleast_1d(np.asarray(c)) for c in columns]
    rows = max((len(c) for c in columns), default=0)
    columns = [
        np.full(rows, c[0]) if len(c) == 1 and rows > 1 else c for c in columns
    ]
    if any(len(c) != rows for c in columns):
        raise StorageError(f"CSV columns for {path} have mismatched lengths")
    with _open_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for k in range(rows):
            writer.writerow(
                [_FMT % c[k] if np.issubdtype(c.dtype, np.floating) else c[k]
                 for c in columns]
            )


def write_profile_csv(path, report, length_unit="lu", length_scale=1.0):
    """ProfileReport as CSV; columns follow the report's field order.

    ``length_scale`` converts lattice lengths into ``length_unit`` (for
    example the lattice spacing in micrometers with unit "um").
    """
    names = list(report.column_names(length_unit)) + [
        f"cfl_width_{length_unit}", "margination", "relative_viscosity",
    ]
    s = float(length_scale)
    inner, outer, haematocrit, platelets, volumes = report.columns()
    columns = [
        inner * s, outer * s, haematocrit, platelets, volumes * s**3,
        np.array([report.cfl_width * s]),
        np.array([report.margination]),
        np.array([report.relative_viscosity]),
    ]
    write_csv_report(path, names, columns)


def read_csv_report(path):
    """Returns (names, columns as float arrays where possible)."""
    try:
        with open(path, "r", newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise StorageError(f"{path} is empty")
    names = rows[0]
    data = rows[1:]
    columns = []
    for j in range(len(names)):
        values = [row[j] for row in data]
        try:
            columns.append(np.array([float(v) for v in values]))
        except ValueError:
            columns.append(np.array(values))
    return names, columns
