"""Conforming P1 triangulations with Dirichlet/Neumann edge markers."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import MeshError

__all__ = ["Mesh", "generate_rect_mesh", "read_mesh", "write_mesh", "triangle_geometry"]

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class Mesh:
    """A validated 2D triangulation.

    Attributes
    ----------
    nodes : (N, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    boundary_edges : tuple of (i, j, marker) with marker ``"D"`` or ``"N"``
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: tuple

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "boundary_edges", tuple((int(i), int(j), str(m)) for i, j, m in self.boundary_edges))
        nodes.setflags(write=False)
        tris.setflags(write=False)
        self._validate()

    # -- validation ---------------------------------------------------------

    def _validate(self):
        n = len(self.nodes)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError("nodes must be an (N, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3 or len(self.triangles) == 0:
            raise MeshError("triangles must be a nonempty (T, 3) array")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("node coordinates must be finite")
        if self.triangles.min() < 0 or self.triangles.max() >= n:
            raise MeshError(f"triangle index out of range (have {n} nodes)")
        bad = np.flatnonzero(self.areas <= 0)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has nonpositive area (must be counter-clockwise)")
        if len({tuple(sorted(t)) for t in self.triangles.tolist()}) != len(self.triangles):
            raise MeshError("duplicate triangle")

        count = Counter()
        for t in self.triangles.tolist():
            for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
                count[(min(a, b), max(a, b))] += 1
        declared = {}
        for i, j, m in self.boundary_edges:
            if not (0 <= i < n and 0 <= j < n):
                raise MeshError(f"boundary edge ({i}, {j}) index out of range (have {n} nodes)")
            if m not in ("D", "N"):
                raise MeshError(f"unknown boundary marker {m!r}")
            key = (min(i, j), max(i, j))
            if key in declared:
                raise MeshError(f"boundary edge {key} declared twice")
            declared[key] = m
        for key, c in count.items():
            if c > 2:
                raise MeshError(f"edge {key} shared by {c} triangles")
            if c == 1 and key not in declared:
                raise MeshError(f"edge {key} lies on the boundary but carries no marker (hole or missing edge)")
            if c == 2 and key in declared:
                raise MeshError(f"edge {key} is interior but marked as boundary")
        for key in declared:
            if key not in count:
                raise MeshError(f"boundary edge {key} is not an edge of any triangle")

    # -- derived geometry ---------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _corners(self):
        p = self.nodes[self.triangles]  # (T, 3, 2)
        return p

    @cached_property
    def areas(self) -> np.ndarray:
        p = self._corners
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def gradients(self) -> np.ndarray:
        """(T, 3, 2) constant gradients of the three P1 basis functions."""
        p = self._corners
        # grad phi_k = rot90(opposite edge) / (2|T|)
        x, y = p[..., 0], p[..., 1]
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return np.stack([gx, gy], axis=2) / (2.0 * self.areas[:, None, None])

    @cached_property
    def node_areas(self) -> np.ndarray:
        """Lumped-mass weights: one third of the area of every adjacent triangle."""
        return np.bincount(self.triangles.ravel(), weights=np.repeat(self.areas / 3.0, 3),
                           minlength=self.n_nodes)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        # a node touching any Dirichlet edge is Dirichlet (ties go to D)
        s = {k for i, j, m in self.boundary_edges if m == "D" for k in (i, j)}
        return np.array(sorted(s), dtype=np.int64)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def pattern(self):
        # imported lazily: assembly depends on mesh, not the other way round
        from .assembly import SparsityPattern

        return SparsityPattern(self)

    def same_as(self, other: "Mesh") -> bool:
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.triangles, other.triangles)
                and sorted(self.boundary_edges) == sorted(other.boundary_edges))


def triangle_geometry(mesh: Mesh, tri_index: int):
    """Area and the three P1 basis gradients of one triangle."""
    if not 0 <= tri_index < mesh.n_triangles:
        raise IndexError(f"triangle index {tri_index} out of range")
    return float(mesh.areas[tri_index]), mesh.gradients[tri_index].copy()


def generate_rect_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0, markers=None) -> Mesh:
    """Structured mesh of ``[0, lx] x [0, ly]``, each cell cut along its SW-NE diagonal.

    ``markers`` maps side names (left/right/bottom/top) to ``"D"`` or ``"N"``;
    omitted sides are Neumann.  Node ``(i, j)`` has index ``j*(nx+1) + i``.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if not (lx > 0 and ly > 0):
        raise ValueError("lx and ly must be positive")
    markers = dict(markers or {})
    for side, m in markers.items():
        if side not in SIDES:
            raise ValueError(f"unknown side {side!r}")
        if m not in ("D", "N"):
            raise ValueError(f"unknown marker {m!r}")
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    sw, se = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    nw, ne = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([sw, se, ne])
    tris[1::2] = np.column_stack([sw, ne, nw])

    edges = []
    for i in range(nx):
        edges.append((idx[0, i], idx[0, i + 1], markers.get("bottom", "N")))
    for j in range(ny):
        edges.append((idx[j, nx], idx[j + 1, nx], markers.get("right", "N")))
    for i in range(nx, 0, -1):
        edges.append((idx[ny, i], idx[ny, i - 1], markers.get("top", "N")))
    for j in range(ny, 0, -1):
        edges.append((idx[j, 0], idx[j - 1, 0], markers.get("left", "N")))
    return Mesh(nodes, tris, tuple(edges))


def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def read_mesh(path) -> Mesh:
    """Read the line-oriented ASCII mesh format.

    Header ``nodes N triangles T bedges B`` followed by N ``x y`` lines,
    T ``i j k`` lines and B ``i j M`` lines (M in {D, N}).
    """
    lines = _data_lines(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise MeshError(f"{path}: empty mesh file") from None
    if len(head) != 6 or head[0] != "nodes" or head[2] != "triangles" or head[4] != "bedges":
        raise MeshError(f"{path}:{lineno}: malformed header, expected 'nodes N triangles T bedges B'")
    try:
        n, t, nb = int(head[1]), int(head[3]), int(head[5])
    except ValueError:
        raise MeshError(f"{path}:{lineno}: malformed header counts") from None

    def take(count, width, conv, what):
        out = []
        for _ in range(count):
            try:
                ln, toks = next(lines)
            except StopIteration:
                raise MeshError(f"{path}: expected {count} {what} lines, file ended early") from None
            if len(toks) != width:
                raise MeshError(f"{path}:{ln}: expected {width} fields for {what}")
            try:
                out.append([c(tok) for c, tok in zip(conv, toks)])
            except ValueError:
                raise MeshError(f"{path}:{ln}: cannot parse {what} line") from None
        return out

    nodes = take(n, 2, (float, float), "node")
    tris = take(t, 3, (int, int, int), "triangle")
    bedges = take(nb, 3, (int, int, str), "boundary edge")
    extra = next(lines, None)
    if extra is not None:
        raise MeshError(f"{path}:{extra[0]}: trailing data after mesh")
    for k, tri in enumerate(tris):
        if min(tri) < 0 or max(tri) >= n:
            raise MeshError(f"{path}: triangle {k} index out of range (have {n} nodes)")
    return Mesh(np.array(nodes, dtype=float).reshape(-1, 2), np.array(tris, dtype=np.int64).reshape(-1, 3),
                tuple(bedges))


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} bedges {len(mesh.boundary_edges)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        for i, j, m in mesh.boundary_edges:
            fh.write(f"{i} {j} {m}\n")
