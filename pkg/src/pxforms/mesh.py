"""Oriented simplicial complexes in R^n with per-cell constant metrics.

Every k-simplex is stored as a sorted tuple of vertex indices; its
orientation is the ascending vertex order. Top cells follow the same rule,
so a top cell may be negatively oriented relative to the ambient space;
``cell_orientation`` records that sign.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exterior_algebra import MetricTensor


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SimplicialComplex:
    vertices: np.ndarray                 # (nv, n)
    simplices: tuple                     # simplices[k]: (n_k, k+1) int arrays
    boundary_ops: tuple                  # boundary_ops[k]: ∂_k, shape (n_{k-1}, n_k); [0] is None
    cell_faces: tuple                    # cell_faces[k]: (ncells, C(n+1, k+1)) global k-simplex ids
    metrics: np.ndarray                  # (ncells, n, n)
    metric_inv: np.ndarray               # (ncells, n, n)
    sqrt_det: np.ndarray                 # (ncells,)
    volumes: np.ndarray                  # Euclidean volumes (ncells,)
    weights: np.ndarray                  # sqrt_det * volume
    cell_orientation: np.ndarray         # +1/-1 per cell
    barycenters: np.ndarray              # (ncells, n)
    boundary_flags: tuple                # boundary_flags[k]: bool (n_k,)
    grad_lambda: np.ndarray              # (ncells, n+1, n) barycentric gradients
    _index: tuple = field(default=(), repr=False)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_cells(self) -> int:
        return len(self.simplices[-1])

    def count(self, k: int) -> int:
        return len(self.simplices[k])

    def coboundary_matrix(self, k: int) -> sp.csr_matrix:
        """Signed incidence d_k = ∂_{k+1}^T mapping k-cochains to (k+1)-cochains."""
        if not 0 <= k < self.dim:
            raise MeshError(f"no coboundary from degree {k} in dimension {self.dim}")
        return self.boundary_ops[k + 1].T.tocsr()

    def simplex_index(self, k: int, verts) -> int:
        return self._index[k][tuple(sorted(int(v) for v in verts))]

    def interior_mask(self, k: int) -> np.ndarray:
        return ~self.boundary_flags[k]

    @property
    def diameter(self) -> float:
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def total_volume(self) -> float:
        return float(self.weights.sum())

    def cell_metric(self, c: int) -> MetricTensor:
        return MetricTensor.from_matrix(self.metrics[c])

    def is_euclidean(self) -> bool:
        return bool(np.all(self.metrics == np.eye(self.dim)))


def build_complex(vertices, top_cells, metric_spec=None) -> SimplicialComplex:
    """Enumerate all faces, incidences, weights and boundary flags.

    ``metric_spec`` is ``None`` (Euclidean), a single n×n matrix, or an
    array of per-cell matrices.
    """
    X = np.array(vertices, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    nv, n = X.shape
    if n not in (1, 2, 3):
        raise MeshError(f"ambient dimension {n} not supported (1..3)")
    cells = np.array(top_cells, dtype=np.int64)
    if cells.ndim != 2 or cells.shape[1] != n + 1:
        raise MeshError(f"top cells must have {n + 1} vertices each")
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise MeshError("cell references a vertex index out of range")
    cells = np.sort(cells, axis=1)
    order = np.lexsort(cells.T[::-1]) if len(cells) else np.arange(0)
    cells = cells[order]
    if len({tuple(c) for c in cells}) != len(cells):
        raise MeshError("duplicate top cells")
    if np.any(cells[:, 1:] == cells[:, :-1]):
        raise MeshError("cell with repeated vertex")

    edges = X[cells[:, 1:]] - X[cells[:, :1]]          # (nc, n, n) rows e_i
    det = np.linalg.det(edges)
    vol = np.abs(det) / math.factorial(n)
    scale = np.abs(edges).max(axis=(1, 2)) ** n
    if np.any(vol <= 1e-13 * np.maximum(scale, 1e-300)):
        bad = int(np.argmin(vol))
        raise MeshError(f"degenerate cell {bad} (zero volume)")
    orientation = np.sign(det).astype(np.int8)
    # columns of E^{-1} with E rows e_i: grad λ_i = row i of inv(E^T)
    inv = np.linalg.inv(np.transpose(edges, (0, 2, 1)))
    grads = np.empty((len(cells), n + 1, n))
    grads[:, 1:, :] = inv
    grads[:, 0, :] = -inv.sum(axis=1)

    if metric_spec is None:
        metrics = np.broadcast_to(np.eye(n), (len(cells), n, n)).copy()
    else:
        m = np.array(metric_spec, dtype=float)
        metrics = np.broadcast_to(m, (len(cells), n, n)).copy() if m.ndim == 2 else m
        if metrics.shape != (len(cells), n, n):
            raise MeshError("metric spec must be n×n or one n×n matrix per cell")
        if m.ndim == 3:
            metrics = metrics[order]
        if not np.allclose(metrics, np.transpose(metrics, (0, 2, 1)), atol=1e-14):
            raise MeshError("metric must be symmetric")
        if np.any(np.linalg.eigvalsh(metrics)[:, 0] <= 0):
            raise MeshError("metric must be positive definite")
    metric_inv = np.linalg.inv(metrics)
    sqrt_det = np.sqrt(np.linalg.det(metrics))

    simplices, index, cell_faces = [], [], []
    for k in range(n + 1):
        local = list(combinations(range(n + 1), k + 1))
        faces = cells[:, local].reshape(-1, k + 1)
        uniq, inverse = np.unique(faces, axis=0, return_inverse=True)
        simplices.append(uniq)
        cell_faces.append(inverse.reshape(len(cells), len(local)))
        index.append({tuple(int(v) for v in s): i for i, s in enumerate(uniq)})

    if len(simplices[0]) != nv:
        raise MeshError("mesh has vertices not used by any cell")

    boundary_ops = [None]
    for k in range(1, n + 1):
        rows, cols, vals = [], [], []
        for j in range(k + 1):
            sub = np.delete(simplices[k], j, axis=1)
            rows.append(_lookup(index[k - 1], sub))
            cols.append(np.arange(len(simplices[k])))
            vals.append(np.full(len(simplices[k]), (-1.0) ** j))
        boundary_ops.append(sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(simplices[k - 1]), len(simplices[k]))))

    flags = [np.zeros(len(s), dtype=bool) for s in simplices]
    if n >= 1:
        counts = np.bincount(cell_faces[n - 1].ravel(), minlength=len(simplices[n - 1]))
        if np.any(counts > 2):
            raise MeshError("a facet bounds more than two cells (non-manifold mesh)")
        flags[n - 1] = counts == 1
        bfacets = simplices[n - 1][flags[n - 1]]
        for k in range(n - 1):
            sub = np.unique(
                bfacets[:, list(combinations(range(n), k + 1))].reshape(-1, k + 1), axis=0)
            if len(sub):
                flags[k][_lookup(index[k], sub)] = True

    for arr in [X, metrics, metric_inv, sqrt_det, vol, grads, orientation]:
        arr.setflags(write=False)
    return SimplicialComplex(
        vertices=X, simplices=tuple(simplices), boundary_ops=tuple(boundary_ops),
        cell_faces=tuple(cell_faces), metrics=metrics, metric_inv=metric_inv,
        sqrt_det=sqrt_det, volumes=vol, weights=sqrt_det * vol,
        cell_orientation=orientation, barycenters=X[cells].mean(axis=1),
        boundary_flags=tuple(flags), grad_lambda=grads, _index=tuple(index))


def _lookup(index: dict, rows: np.ndarray) -> np.ndarray:
    return np.fromiter((index[tuple(int(v) for v in r)] for r in rows),
                       dtype=np.int64, count=len(rows))


# -- structured generators ---------------------------------------------------

def interval_mesh(nx: int, a: float = 0.0, b: float = 1.0, metric=None) -> SimplicialComplex:
    x = np.linspace(a, b, nx + 1)
    cells = np.stack([np.arange(nx), np.arange(1, nx + 1)], axis=1)
    return build_complex(x[:, None], cells, metric)


def square_mesh(nx: int, ny: int | None = None, *, lower=(0.0, 0.0), upper=(1.0, 1.0),
                pattern: str = "right", metric=None) -> SimplicialComplex:
    """Triangulated rectangle: ``right`` (one diagonal per square) or
    ``crisscross`` (both diagonals, center vertex per square)."""
    ny = nx if ny is None else ny
    xs = np.linspace(lower[0], upper[0], nx + 1)
    ys = np.linspace(lower[1], upper[1], ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = [np.stack([gx.ravel(), gy.ravel()], axis=1)]
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    v00, v10, v01, v11 = (vid[i, j].ravel(), vid[i + 1, j].ravel(),
                          vid[i, j + 1].ravel(), vid[i + 1, j + 1].ravel())
    if pattern == "right":
        cells = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    elif pattern == "crisscross":
        centers = 0.5 * (verts[0][v00] + verts[0][v11])
        cid = len(verts[0]) + np.arange(len(v00))
        verts.append(centers)
        cells = np.concatenate([np.stack([v00, v10, cid], 1), np.stack([v10, v11, cid], 1),
                                np.stack([v11, v01, cid], 1), np.stack([v01, v00, cid], 1)])
    else:
        raise MeshError(f"unknown square pattern {pattern!r}")
    return build_complex(np.concatenate(verts), cells, metric)


def cube_mesh(nx: int, ny: int | None = None, nz: int | None = None, *,
              lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0), metric=None) -> SimplicialComplex:
    """Freudenthal (Kuhn) triangulation: six tetrahedra per cube."""
    ny = nx if ny is None else ny
    nz = nx if nz is None else nz
    axes = [np.linspace(lower[d], upper[d], m + 1) for d, m in enumerate((nx, ny, nz))]
    g = np.meshgrid(*axes, indexing="ij")
    verts = np.stack([a.ravel() for a in g], axis=1)
    vid = np.arange(verts.shape[0]).reshape(nx + 1, ny + 1, nz + 1)
    base = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                indexing="ij"), axis=-1).reshape(-1, 3)
    cells = []
    for perm in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]:
        path = [base.copy()]
        cur = base.copy()
        for ax in perm:
            cur = cur.copy()
            cur[:, ax] += 1
            path.append(cur)
        cells.append(np.stack([vid[p[:, 0], p[:, 1], p[:, 2]] for p in path], axis=1))
    return build_complex(verts, np.concatenate(cells), metric)


def disk_mesh(rings: int, radius: float = 1.0, center=(0.0, 0.0), metric=None,
              warp: float = 0.0) -> SimplicialComplex:
    """Disk with ``rings`` concentric rings of 6j vertices on circles of radius jR/rings.

    ``warp`` in (-1, 1) moves the ring angles by ``t -> t + warp sin t``, which
    keeps the vertices on their circles but makes the spacing nonuniform.
    """
    if not -1 < warp < 1:
        raise MeshError("warp must lie in (-1, 1)")
    verts = [np.array([center], dtype=float)]
    ring_ids = [np.array([0])]
    nxt = 1
    for j in range(1, rings + 1):
        m = 6 * j
        t = 2 * np.pi * np.arange(m) / m
        t = t + warp * np.sin(t)
        r = radius * j / rings
        verts.append(np.stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)], 1))
        ring_ids.append(np.arange(nxt, nxt + m))
        nxt += m
    cells = []
    for j in range(1, rings + 1):
        inner_ids, outer_ids = ring_ids[j - 1], ring_ids[j]
        if j == 1:
            for a in range(6):
                cells.append((0, outer_ids[a], outer_ids[(a + 1) % 6]))
            continue
        mi, mo = len(inner_ids), len(outer_ids)
        # merge the two rings by angle
        a = b = 0
        while a < mi or b < mo:
            ta = (a + 1) / mi
            tb = (b + 1) / mo
            if b < mo and (a >= mi or tb <= ta):
                cells.append((inner_ids[a % mi], outer_ids[b], outer_ids[(b + 1) % mo]))
                b += 1
            else:
                cells.append((inner_ids[a], inner_ids[(a + 1) % mi], outer_ids[b % mo]))
                a += 1
    return build_complex(np.concatenate(verts), np.array(cells), metric)


GENERATORS = {
    "interval": interval_mesh,
    "square": square_mesh,
    "cube": cube_mesh,
    "disk": disk_mesh,
}


def generate(spec: str) -> SimplicialComplex:
    """Build a mesh from a compact spec such as ``square:32``,
    ``square:8x4:crisscross``, ``cube:8``, ``interval:16`` or ``disk:10``."""
    parts = spec.strip().split(":")
    kind = parts[0]
    if kind not in GENERATORS or len(parts) < 2:
        raise MeshError(f"unknown mesh generator spec {spec!r}")
    sizes = [int(s) for s in parts[1].split("x")]
    if kind == "square":
        pattern = parts[2] if len(parts) > 2 else "right"
        return square_mesh(*sizes, pattern=pattern)
    if len(parts) > 2:
        raise MeshError(f"unexpected options in {spec!r}")
    return GENERATORS[kind](*sizes)


# -- balls ---------------------------------------------------------------------

@dataclass(frozen=True)
class BallSample:
    center: np.ndarray
    radius: float
    members: np.ndarray
    weights: np.ndarray
    total: float

    @property
    def empty(self) -> bool:
        return len(self.members) == 0


def ball(complex: SimplicialComplex, x0, rho: float, closed: bool = False) -> BallSample:
    """Top cells whose barycenter lies in the (open by default) ball B_rho(x0)."""
    if rho <= 0:
        raise ValueError("ball radius must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dist = np.linalg.norm(complex.barycenters - x0, axis=1)
    inside = dist <= rho if closed else dist < rho
    members = np.flatnonzero(inside)
    w = complex.weights[members]
    return BallSample(x0, float(rho), members, w, float(w.sum()))


def dyadic_radii(rho0: float, levels: int) -> list[float]:
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    if levels < 2:
        raise ValueError("need at least two levels")
    return [rho0 * 2.0 ** (-j) for j in range(levels)]


def interior_centers(complex: SimplicialComplex, margin: float, spacing: float | None = None) -> np.ndarray:
    """Lattice points of the bounding box at distance >= margin from its sides."""
    lo, hi = complex.vertices.min(axis=0) + margin, complex.vertices.max(axis=0) - margin
    if np.any(hi < lo):
        return np.empty((0, complex.dim))
    spacing = spacing or margin
    axes = [np.arange(l, h + 1e-12, spacing) if h > l else np.array([0.5 * (l + h)])
            for l, h in zip(lo, hi)]
    axes = [a if len(a) else np.array([0.5 * (l + h)]) for a, l, h in zip(axes, lo, hi)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


# -- mesh file format -----------------------------------------------------------

def write_mesh(complex: SimplicialComplex, path) -> None:
    n = complex.dim
    cells = complex.simplices[n]
    lines = [f"dim {n} {len(complex.vertices)} {len(cells)}"]
    lines += [" ".join(repr(float(x)) for x in v) for v in complex.vertices]
    lines += [" ".join(str(int(i)) for i in c) for c in cells]
    if not complex.is_euclidean():
        lines.append("metric")
        lines += [" ".join(repr(float(x)) for x in m.ravel()) for m in complex.metrics]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SimplicialComplex:
    text = Path(path).read_text()
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows or rows[0][1][0] != "dim" or len(rows[0][1]) != 4:
        raise MeshError(f"{path}: header must be 'dim n vcount ccount'")
    try:
        n, nv, nc = (int(t) for t in rows[0][1][1:])
    except ValueError as exc:
        raise MeshError(f"{path}: line {rows[0][0]}: bad header") from exc
    body = rows[1:]
    if len(body) < nv + nc:
        raise MeshError(f"{path}: expected {nv} vertex and {nc} cell lines")

    def parse(seg, width, conv, what):
        out = []
        for lineno, toks in seg:
            if len(toks) != width:
                raise MeshError(f"{path}: line {lineno}: {what} needs {width} entries")
            try:
                out.append([conv(t) for t in toks])
            except ValueError as exc:
                raise MeshError(f"{path}: line {lineno}: bad {what} entry") from exc
        return out

    verts = parse(body[:nv], n, float, "vertex")
    cells = parse(body[nv:nv + nc], n + 1, int, "cell")
    rest = body[nv + nc:]
    metric = None
    if rest:
        if rest[0][1] != ["metric"] or len(rest) != nc + 1:
            raise MeshError(f"{path}: line {rest[0][0]}: expected 'metric' and {nc} rows")
        metric = np.array(parse(rest[1:], n * n, float, "metric")).reshape(nc, n, n)
    return build_complex(np.array(verts), np.array(cells), metric)
