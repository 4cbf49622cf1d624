"""Diagnostics CSV and VTK legacy snapshot writers."""

from __future__ import annotations

import os

from .diagnostics import CSV_FIELDS

__all__ = ["format_value", "write_diag_header", "write_diag_row", "write_snapshot", "CsvSink", "VtkSink"]


def format_value(v) -> str:
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return format(float(v), ".17g")


def write_diag_header(stream):
    stream.write(",".join(CSV_FIELDS) + "\n")


def write_diag_row(row, stream):
    stream.write(",".join(format_value(v) for v in row.csv_values()) + "\n")


def write_snapshot(state, mesh, path):
    """VTK legacy ASCII unstructured grid with point scalars u, w, theta."""
    n, t = mesh.n_nodes, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", f"porous t={format_value(state.t)}", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    out += [f"{format_value(x)} {format_value(y)} 0" for x, y in mesh.nodes]
    out.append(f"CELLS {t} {4 * t}")
    out += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles]
    out.append(f"CELL_TYPES {t}")
    out += ["5"] * t
    out.append(f"POINT_DATA {n}")
    for name, arr in (("u", state.U), ("w", state.W), ("theta", state.Th)):
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [format_value(v) for v in arr]
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc.strerror}") from exc


class CsvSink:
    """Streams diagnostics rows to ``path``; flushes every row."""

    def __init__(self, path):
        self.path = path
        try:
            self._fh = open(path, "w")
        except OSError as exc:
            raise OSError(f"cannot open {path}: {exc.strerror}") from exc
        write_diag_header(self._fh)

    def start(self, state, row):
        self.step(state, row)

    def step(self, state, row):
        write_diag_row(row, self._fh)
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()


class VtkSink:
    """Writes ``snapshot_NNNNNN.vtk`` every ``every`` steps, plus the first and last level."""

    def __init__(self, directory, mesh, every=1):
        self.directory, self.mesh, self.every = directory, mesh, max(1, int(every))
        self.written = []
        self._pending = None

    def _write(self, state, step):
        path = os.path.join(self.directory, f"snapshot_{step:06d}.vtk")
        write_snapshot(state, self.mesh, path)
        self.written.append(path)

    def start(self, state, row):
        self._write(state, row.step)

    def step(self, state, row):
        if row.step % self.every == 0:
            self._write(state, row.step)
            self._pending = None
        else:
            self._pending = (state, row.step)

    def close(self):
        if self._pending is not None:
            self._write(*self._pending)
            self._pending = None
