"""Closed triangulated surfaces: generation, OFF ingestion, transforms, statistics.

Panels are flat triangles.  Every mesh that leaves this module is watertight
(each edge shared by exactly two triangles), consistently wound and oriented
so that the normals point out of the enclosed volume.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MeshError",
    "TopologyError",
    "OrientationError",
    "OffParseError",
    "OverlapError",
    "SurfaceMesh",
    "MeshStats",
    "generate_icosphere",
    "generate_ellipsoid",
    "generate_spheroid",
    "load_off",
    "write_off",
    "two_copy",
    "scaled",
    "translated",
    "mesh_stats",
]


class MeshError(ValueError):
    """Base class for invalid surfaces."""


class OffParseError(MeshError):
    pass


class TopologyError(MeshError):
    pass


class OrientationError(MeshError):
    pass


class OverlapError(MeshError):
    pass


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Immutable closed triangle mesh.

    Parameters
    ----------
    vertices : (nv, 3) array of float
    triangles : (n, 3) array of int
        Vertex indices, counter-clockwise when seen from outside.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    centroids: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("vertices must be (nv, 3) and triangles (n, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        cr = np.cross(p1 - p0, p2 - p0)
        dbl = np.linalg.norm(cr, axis=1)
        if np.any(dbl <= 0.0):
            bad = int(np.argmin(dbl))
            raise MeshError(f"degenerate triangle {bad}")
        for name, arr in (
            ("vertices", v),
            ("triangles", t),
            ("centroids", (p0 + p1 + p2) / 3.0),
            ("areas", 0.5 * dbl),
            ("normals", cr / dbl[:, None]),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_panels(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        """(n, 3, 3) array of panel corner coordinates."""
        return self.vertices[self.triangles]

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def volume(self) -> float:
        # divergence theorem: sum of signed tetrahedra against the origin
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @property
    def diameters(self) -> np.ndarray:
        c = self.corners()
        e = np.stack(
            [
                np.linalg.norm(c[:, 1] - c[:, 0], axis=1),
                np.linalg.norm(c[:, 2] - c[:, 1], axis=1),
                np.linalg.norm(c[:, 0] - c[:, 2], axis=1),
            ],
            axis=1,
        )
        return e.max(axis=1)

    def digest(self) -> str:
        """Stable content hash (used in matrix dumps and report ids)."""
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]

    def edge_map(self) -> dict:
        """Map undirected edge -> list of (triangle, directed edge) occurrences."""
        emap: dict = {}
        for k, (a, b, c) in enumerate(self.triangles.tolist()):
            for u, w in ((a, b), (b, c), (c, a)):
                emap.setdefault(_edge_key(u, w), []).append((k, (u, w)))
        return emap

    def validate(self) -> None:
        """Raise if the mesh is not a closed, consistently outward oriented surface."""
        for e, occ in self.edge_map().items():
            if len(occ) != 2:
                kind = "boundary" if len(occ) == 1 else "non-manifold"
                raise TopologyError(f"{kind} edge {e} used by {len(occ)} triangle(s)")
            if occ[0][1] == occ[1][1]:
                raise OrientationError(f"inconsistent winding across edge {e}")
        if self.volume <= 0.0:
            raise OrientationError("normals point inward (signed volume <= 0)")

    def with_vertices(self, vertices: np.ndarray) -> "SurfaceMesh":
        return SurfaceMesh(vertices, self.triangles)


@dataclass(frozen=True)
class MeshStats:
    n_panels: int
    n_vertices: int
    area: float
    volume: float
    min_quality: float
    max_quality: float
    min_edge: float
    max_edge: float
    normal_closure: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def mesh_stats(mesh: SurfaceMesh) -> MeshStats:
    """Area, divergence-theorem volume and panel quality (inradius / circumradius)."""
    c = mesh.corners()
    a = np.linalg.norm(c[:, 1] - c[:, 2], axis=1)
    b = np.linalg.norm(c[:, 2] - c[:, 0], axis=1)
    cc = np.linalg.norm(c[:, 0] - c[:, 1], axis=1)
    s = 0.5 * (a + b + cc)
    inr = mesh.areas / s
    circ = a * b * cc / (4.0 * mesh.areas)
    q = inr / circ
    edges = np.concatenate([a, b, cc])
    closure = np.linalg.norm((mesh.areas[:, None] * mesh.normals).sum(axis=0)) / mesh.area
    return MeshStats(
        n_panels=mesh.n_panels,
        n_vertices=len(mesh.vertices),
        area=mesh.area,
        volume=mesh.volume,
        min_quality=float(q.min()),
        max_quality=float(q.max()),
        min_edge=float(edges.min()),
        max_edge=float(edges.max()),
        normal_closure=float(closure),
    )


def _icosahedron():
    p = (1.0 + 5.0**0.5) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1)[:, None], f


def _unit_icosphere(subdivisions: int):
    verts, faces = _icosahedron()
    verts = list(map(tuple, verts))
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = _edge_key(i, j)
            if key not in cache:
                m = np.add(verts[i], verts[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new = []
        for a, b, c in faces.tolist():
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new, dtype=np.int64)
    return np.array(verts), faces


def generate_icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` panels, vertices on the sphere."""
    if radius <= 0:
        raise MeshError("radius must be positive")
    if subdivisions < 0:
        raise MeshError("subdivisions must be >= 0")
    v, f = _unit_icosphere(int(subdivisions))
    return SurfaceMesh(radius * v + np.asarray(center, dtype=float), f)


def generate_ellipsoid(semi_axes, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Icosphere vertices stretched by ``diag(semi_axes)``.

    Normals, areas and centroids are recomputed from the mapped corners.
    """
    ax = np.asarray(semi_axes, dtype=float)
    if ax.shape != (3,) or np.any(ax <= 0):
        raise MeshError("semi_axes must be three positive lengths")
    v, f = _unit_icosphere(int(subdivisions))
    return SurfaceMesh(v * ax + np.asarray(center, dtype=float), f)


def generate_spheroid(polar: float, equatorial: float, subdivisions: int = 2) -> SurfaceMesh:
    """Spheroid with symmetry axis along x (prolate when ``polar > equatorial``)."""
    return generate_ellipsoid((polar, equatorial, equatorial), subdivisions)


def scaled(mesh: SurfaceMesh, t: float) -> SurfaceMesh:
    if t <= 0:
        raise MeshError("scale must be positive")
    return mesh.with_vertices(mesh.vertices * t)


def translated(mesh: SurfaceMesh, z) -> SurfaceMesh:
    return mesh.with_vertices(mesh.vertices + np.asarray(z, dtype=float))


def _bounding_sphere(mesh: SurfaceMesh):
    c = mesh.vertices.mean(axis=0)
    return c, float(np.linalg.norm(mesh.vertices - c, axis=1).max())


def two_copy(mesh: SurfaceMesh, t: float, z) -> SurfaceMesh:
    """Disjoint union of ``t * mesh`` and ``t * mesh + z``."""
    z = np.asarray(z, dtype=float)
    base = scaled(mesh, t)
    _, r = _bounding_sphere(base)
    if np.linalg.norm(z) <= 2.0 * r:
        raise OverlapError(
            f"copies may intersect: |z| = {np.linalg.norm(z):.6g} <= 2 * bounding radius {r:.6g}"
        )
    nv = len(base.vertices)
    v = np.vstack([base.vertices, base.vertices + z])
    f = np.vstack([base.triangles, base.triangles + nv])
    return SurfaceMesh(v, f)


# ---------------------------------------------------------------------------
# OFF ingestion

def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _parse_off(text: str):
    lines = list(_tokens(text))
    if not lines:
        raise OffParseError("empty file")
    head = lines[0]
    if head[0].upper() != "OFF":
        raise OffParseError(f"missing OFF header, got {head[0]!r}")
    rest = head[1:]
    k = 1
    if not rest:
        if len(lines) < 2:
            raise OffParseError("missing counts line")
        rest = lines[1]
        k = 2
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except (ValueError, IndexError) as exc:
        raise OffParseError(f"bad counts line: {rest}") from exc
    if len(lines) < k + nv + nf:
        raise OffParseError(f"expected {nv} vertices and {nf} faces, file is truncated")
    try:
        verts = np.array([[float(x) for x in lines[k + i][:3]] for i in range(nv)])
    except ValueError as exc:
        raise OffParseError("non-numeric vertex coordinate") from exc
    if verts.shape != (nv, 3):
        raise OffParseError("vertex lines need three coordinates")
    faces = []
    for i in range(nf):
        row = lines[k + nv + i]
        try:
            cnt = int(row[0])
            idx = [int(x) for x in row[1 : 1 + cnt]]
        except ValueError as exc:
            raise OffParseError(f"bad face line {i}: {row}") from exc
        if cnt < 3 or len(idx) != cnt:
            raise OffParseError(f"bad face line {i}: {row}")
        faces.append(idx)
    return verts, faces


def _triangulate(verts, faces):
    tris = []
    for f in faces:
        if len(f) == 3:
            tris.append(f)
        elif len(f) == 4:
            a, b, c, d = f
            if np.linalg.norm(verts[a] - verts[c]) <= np.linalg.norm(verts[b] - verts[d]):
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]
        else:
            tris += [[f[0], f[i], f[i + 1]] for i in range(1, len(f) - 1)]
    return np.array(tris, dtype=np.int64)


def _orient(tris: np.ndarray) -> np.ndarray:
    """Make winding consistent by breadth-first propagation over shared edges."""
    tris = tris.copy()
    emap: dict = {}
    for k, (a, b, c) in enumerate(tris.tolist()):
        for u, w in ((a, b), (b, c), (c, a)):
            emap.setdefault(_edge_key(u, w), []).append(k)
    for e, occ in emap.items():
        if len(occ) == 1:
            raise TopologyError(f"boundary edge {e} (surface is not closed)")
        if len(occ) > 2:
            raise TopologyError(f"non-manifold edge {e} shared by {len(occ)} triangles")
    seen = np.zeros(len(tris), dtype=bool)
    for start in range(len(tris)):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        while queue:
            k = queue.popleft()
            a, b, c = tris[k]
            for u, w in ((a, b), (b, c), (c, a)):
                for j in emap[_edge_key(u, w)]:
                    if j == k:
                        continue
                    t = tris[j].tolist()
                    directed = {(t[0], t[1]), (t[1], t[2]), (t[2], t[0])}
                    if seen[j]:
                        if (u, w) in directed:
                            raise OrientationError(f"non-orientable surface at edge {(u, w)}")
                        continue
                    if (u, w) in directed:
                        tris[j] = tris[j][::-1]
                    seen[j] = True
                    queue.append(j)
    return tris


def _components(tris: np.ndarray, nv: int) -> np.ndarray:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    rows = np.repeat(np.arange(len(tris)), 3)
    m = coo_matrix((np.ones(rows.size), (rows, tris.ravel())), shape=(len(tris), nv)).tocsr()
    adj = m @ m.T
    return connected_components(adj, directed=False)[1]


def load_off(path) -> tuple[SurfaceMesh, list[str]]:
    """Read an ASCII OFF surface.

    Returns the mesh and a list of repair notes (empty when the file was
    already consistent and outward oriented).
    """
    text = Path(path).read_text()
    verts, faces = _parse_off(text)
    tris = _triangulate(verts, faces)
    notes = []
    fixed = _orient(tris)
    if not np.array_equal(fixed, tris):
        notes.append("winding made consistent")
    labels = _components(fixed, len(verts))
    for lab in np.unique(labels):
        sel = labels == lab
        c = verts[fixed[sel]]
        vol = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum()
        if vol < 0:
            fixed[sel] = fixed[sel][:, ::-1]
            notes.append(f"component {int(lab)} flipped to outward orientation")
    used = np.unique(fixed)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    mesh = SurfaceMesh(verts[used], remap[fixed])
    mesh.validate()
    return mesh, notes


def write_off(mesh: SurfaceMesh, path) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {mesh.n_panels} 0"]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in mesh.vertices]
    lines += ["3 %d %d %d" % tuple(t) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")
