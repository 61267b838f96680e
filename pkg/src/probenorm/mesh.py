"""Triangle meshes: OBJ/STL loading, a median-split BVH and watertight raycasts.

Ray-triangle tests follow the watertight scheme of shearing into ray space, so
neighbouring triangles evaluate a shared edge with exactly opposite signs.  A
point lying exactly on an edge belongs to the triangle whose directed copy of
that edge goes from the lexicographically smaller vertex to the larger one.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
LEAF_SIZE = 4
MAX_DEPTH = 64

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


class MeshError(ValueError):
    """Mesh file could not be turned into a usable mesh."""


class MeshParseError(MeshError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class NoContactError(RuntimeError):
    """The probe ray does not reach the surface."""


def _lex_less(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return (p[:, 0] < q[:, 0]) | (
        (p[:, 0] == q[:, 0])
        & ((p[:, 1] < q[:, 1]) | ((p[:, 1] == q[:, 1]) & (p[:, 2] < q[:, 2])))
    )


@dataclass(eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(init=False)
    dropped: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        cross = np.cross(b - a, c - a)
        twice_area = np.linalg.norm(cross, axis=1)
        keep = 0.5 * twice_area >= DEGENERATE_AREA
        n_bad = int(np.count_nonzero(~keep))
        if n_bad:
            log.warning("dropped %d degenerate triangle(s)", n_bad)
        t, cross, twice_area = t[keep], cross[keep], twice_area[keep]
        if len(t) == 0:
            raise MeshError("mesh has no non-degenerate triangles")
        self.vertices = v
        self.triangles = t
        self.normals = cross / twice_area[:, None]
        self.dropped += n_bad
        a, b, c = self.corners()
        # edge order per triangle: (b->c, c->a, a->b)
        self._owns = np.stack([_lex_less(b, c), _lex_less(c, a), _lex_less(a, b)], axis=1)

    def corners(self):
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, rotation=None, translation=None) -> "TriangleMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.triangles.copy())


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _parse_obj(path):
    verts, tris = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    xyz = [float(s) for s in parts[1:4]]
                except ValueError:
                    raise MeshParseError("bad vertex record", path, lineno) from None
                if len(xyz) != 3:
                    raise MeshParseError("vertex needs 3 coordinates", path, lineno)
                verts.append(xyz)
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    try:
                        k = int(tok.split("/", 1)[0])
                    except ValueError:
                        raise MeshParseError(f"bad face index {tok!r}", path, lineno) from None
                    k = k - 1 if k > 0 else len(verts) + k
                    if not 0 <= k < len(verts):
                        raise MeshParseError(
                            f"vertex index {tok} out of range", path, lineno
                        )
                    idx.append(k)
                if len(idx) < 3:
                    raise MeshParseError("face needs at least 3 vertices", path, lineno)
                for j in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[j], idx[j + 1]))
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3)


def _parse_stl(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 84:
        raise MeshParseError("file too short for binary STL", path)
    (count,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * count:
        if data.lstrip()[:5].lower() == b"solid":
            return _parse_ascii_stl(path, data.decode("utf-8", errors="replace"))
        raise MeshParseError(
            f"binary STL size mismatch: header says {count} triangles", path
        )
    rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.frombuffer(data, dtype=rec, count=count, offset=84)
    verts = arr["v"].reshape(-1, 3).astype(float)
    tris = np.arange(3 * count, dtype=np.int64).reshape(-1, 3)
    return verts, tris


def _parse_ascii_stl(path, text):
    verts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if parts and parts[0] == "vertex":
            try:
                verts.append([float(s) for s in parts[1:4]])
            except ValueError:
                raise MeshParseError("bad vertex record", path, lineno) from None
    if len(verts) % 3:
        raise MeshParseError("vertex count not a multiple of 3", path)
    return np.array(verts, dtype=float).reshape(-1, 3), np.arange(len(verts)).reshape(-1, 3)


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ or STL file; degenerate triangles are dropped (see ``dropped``)."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        verts, tris = _parse_obj(path)
    elif ext == ".stl":
        verts, tris = _parse_stl(path)
    else:
        raise MeshParseError(f"unsupported mesh format {ext!r}", path)
    if len(tris) == 0:
        raise MeshError(f"{path}: mesh is empty")
    try:
        mesh = TriangleMesh(verts, tris)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
    log.info("loaded %s: %d vertices, %d triangles", path, mesh.n_vertices, mesh.n_triangles)
    return mesh


def write_obj(mesh: TriangleMesh, path, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.triangles + 1:
            fh.write(f"f {a} {b} {c}\n")


def write_stl(mesh: TriangleMesh, path):
    a, b, c = mesh.corners()
    with open(path, "wb") as fh:
        fh.write(b"probenorm binary stl".ljust(80, b"\0"))
        fh.write(struct.pack("<I", mesh.n_triangles))
        for n, p, q, r in zip(mesh.normals, a, b, c):
            fh.write(struct.pack("<12fH", *n, *p, *q, *r, 0))


def bundled_mesh_path(name: str) -> str:
    path = os.path.join(DATA_DIR, name if name.endswith(".obj") else name + ".obj")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def unit_cube() -> TriangleMesh:
    """Axis-aligned cube on ``[0, 1]^3`` with outward winding."""
    v = np.array(
        [[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]
    )
    # vertex id = 4x + 2y + z
    quads = [
        (0, 1, 3, 2),  # x = 0
        (4, 6, 7, 5),  # x = 1
        (0, 4, 5, 1),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 2, 6, 4),  # z = 0
        (1, 5, 7, 3),  # z = 1
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.array(tris))


def _orient_outward(verts, tris, centre):
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    n = np.cross(b - a, c - a)
    inward = np.einsum("ij,ij->i", n, (a + b + c) / 3.0 - centre) < 0
    tris = tris.copy()
    tris[inward] = tris[inward][:, [0, 2, 1]]
    return tris


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriangleMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = verts[i] + verts[j]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = radius * np.array(verts)
    tris = _orient_outward(v, np.array(faces), np.zeros(3))
    return TriangleMesh(v, tris)


def ellipsoid(semi_axes=(0.30, 0.17, 0.11), subdivisions: int = 3) -> TriangleMesh:
    """Icosphere stretched to an ellipsoid; used as a torso stand-in."""
    sphere = icosphere(subdivisions)
    return TriangleMesh(sphere.vertices * np.asarray(semi_axes, dtype=float), sphere.triangles)


def beveled_cube(size: float = 0.2, bevel: float = 0.04, bevel_deg: float = 8.0) -> TriangleMesh:
    """Cube of edge ``size`` centred at the origin whose four top edges are
    chamfered by strips ``bevel`` wide sloping down at ``bevel_deg``."""
    from scipy.spatial import ConvexHull

    s = size / 2.0
    r = s - bevel
    drop = bevel * math.tan(math.radians(bevel_deg))
    pts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            pts.append((sx * s, sy * s, -s))
            pts.append((sx * s, sy * s, s - drop))
            pts.append((sx * r, sy * r, s))
    v = np.array(pts)
    hull = ConvexHull(v)
    tris = _orient_outward(v, hull.simplices.astype(np.int64), np.zeros(3))
    return TriangleMesh(v, tris)


# ---------------------------------------------------------------------------
# BVH
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BVH:
    """Flattened hierarchy.

    Node ``i`` spans ``lo[i]..hi[i]``; inner nodes have children
    ``left[i], right[i]``, leaves have ``left[i] == -1`` and own
    ``order[start[i]:start[i] + count[i]]``.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def _lists(self):
        # plain-Python copies make the scalar traversal loop much faster
        cached = getattr(self, "_cache", None)
        if cached is None:
            cached = (
                self.lo.tolist(), self.hi.tolist(), self.left.tolist(),
                self.right.tolist(), self.start.tolist(), self.count.tolist(),
            )
            self._cache = cached
        return cached


def build_bvh(m: TriangleMesh) -> BVH:
    a, b, c = m.corners()
    tri_lo = np.minimum(np.minimum(a, b), c)
    tri_hi = np.maximum(np.maximum(a, b), c)
    cent = (a + b + c) / 3.0
    scale = float(np.max(np.abs(m.vertices))) or 1.0
    pad = 1e-9 * scale

    order = np.arange(m.n_triangles)
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        lo.append(tri_lo[idx].min(axis=0) - pad)
        hi.append(tri_hi[idx].max(axis=0) + pad)
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(lo) - 1

    root = new_node(0, m.n_triangles)
    stack = [(root, 0)]
    max_depth = 0
    while stack:
        node, depth = stack.pop()
        max_depth = max(max_depth, depth)
        s, n = start[node], count[node]
        if n <= LEAF_SIZE or depth >= MAX_DEPTH:
            continue
        idx = order[s : s + n]
        cc = cent[idx]
        axis = int(np.argmax(cc.max(axis=0) - cc.min(axis=0)))
        srt = idx[np.argsort(cc[:, axis], kind="stable")]
        order[s : s + n] = srt
        half = n // 2
        l_node = new_node(s, s + half)
        r_node = new_node(s + half, s + n)
        left[node], right[node] = l_node, r_node
        count[node] = 0
        stack.append((r_node, depth + 1))
        stack.append((l_node, depth + 1))

    return BVH(
        np.array(lo), np.array(hi), np.array(left), np.array(right),
        np.array(start), np.array(count), order, max_depth,
    )


# ---------------------------------------------------------------------------
# ray queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RayHit:
    triangle: int
    point: np.ndarray
    distance: float
    normal: np.ndarray
    front_facing: bool


def _ray_space(direction):
    d = np.asarray(direction, dtype=float)
    kz = int(np.argmax(np.abs(d)))
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    if d[kz] < 0:
        kx, ky = ky, kx
    sx, sy, sz = d[kx] / d[kz], d[ky] / d[kz], 1.0 / d[kz]
    return kx, ky, kz, sx, sy, sz


def intersect_triangles(m: TriangleMesh, tri_ids, origin, direction):
    """Watertight test of one ray against a subset of triangles.

    Returns ``(ids, t, front)`` for every hit with ``t >= 0``; ``front`` is
    true when the ray meets the triangle's front (outward) side.
    """
    ids = np.asarray(tri_ids, dtype=np.int64)
    o = np.asarray(origin, dtype=float)
    kx, ky, kz, sx, sy, sz = _ray_space(direction)
    t = m.triangles[ids]
    pa = m.vertices[t[:, 0]] - o
    pb = m.vertices[t[:, 1]] - o
    pc = m.vertices[t[:, 2]] - o
    ax, ay = pa[:, kx] - sx * pa[:, kz], pa[:, ky] - sy * pa[:, kz]
    bx, by = pb[:, kx] - sx * pb[:, kz], pb[:, ky] - sy * pb[:, kz]
    cx, cy = pc[:, kx] - sx * pc[:, kz], pc[:, ky] - sy * pc[:, kz]
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    own = m._owns[ids]
    zu, zv, zw = u == 0, v == 0, w == 0
    ok = ~((zu & ~own[:, 0]) | (zv & ~own[:, 1]) | (zw & ~own[:, 2]))
    pos = (u >= 0) & (v >= 0) & (w >= 0)
    neg = (u <= 0) & (v <= 0) & (w <= 0)
    det = u + v + w
    ok &= (pos | neg) & (det != 0)
    tz = u * (sz * pa[:, kz]) + v * (sz * pb[:, kz]) + w * (sz * pc[:, kz])
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = tz / det
    ok &= dist >= 0
    front = np.einsum("ij,j->i", m.normals[ids], np.asarray(direction, dtype=float)) < 0
    return ids[ok], dist[ok], front[ok]


def _nearest(m, ids, dist, front, origin, direction):
    if len(ids) == 0:
        return None
    best = dist.min()
    pick = np.flatnonzero(dist == best)
    k = pick[np.argmin(ids[pick])]
    tri = int(ids[k])
    d = np.asarray(direction, dtype=float)
    n = m.normals[tri]
    if np.dot(n, d) > 0:
        n = -n
    point = np.asarray(origin, dtype=float) + float(best) * d
    return RayHit(tri, point, float(best), n.copy(), bool(front[k]))


def _check_direction(direction):
    d = np.asarray(direction, dtype=float)
    if d.shape != (3,) or not np.all(np.isfinite(d)):
        raise ValueError("direction must be a finite 3-vector")
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be unit length")
    return d


def raycast_bruteforce(m: TriangleMesh, origin, direction):
    """Nearest hit over every triangle, or ``None``."""
    d = _check_direction(direction)
    ids, dist, front = intersect_triangles(m, np.arange(m.n_triangles), origin, d)
    return _nearest(m, ids, dist, front, origin, d)


def _candidates(bvh: BVH, origin, direction):
    """Triangle ids in every leaf whose box the ray line enters at ``t >= 0``."""
    o = [float(x) for x in origin]
    inv = []
    for x in direction:
        x = float(x)
        inv.append(1.0 / x if x != 0.0 else math.copysign(math.inf, x))
    lo, hi, left, right, start, count = bvh._lists()
    found = []
    stack = [0]
    while stack:
        i = stack.pop()
        tmin, tmax = 0.0, math.inf
        blo, bhi = lo[i], hi[i]
        hit = True
        for k in range(3):
            if inv[k] in (math.inf, -math.inf):
                if not blo[k] <= o[k] <= bhi[k]:
                    hit = False
                    break
                continue
            t1 = (blo[k] - o[k]) * inv[k]
            t2 = (bhi[k] - o[k]) * inv[k]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax * (1 + 1e-12) + 1e-15:
                hit = False
                break
        if not hit:
            continue
        if left[i] < 0:
            s = start[i]
            found.append(bvh.order[s : s + count[i]])
        else:
            stack.append(right[i])
            stack.append(left[i])
    if not found:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(found)


def raycast(bvh: BVH, m: TriangleMesh, origin, direction, stats=None):
    """Nearest hit via the BVH, or ``None`` on a miss.

    ``stats``, when given a dict, receives the number of triangles tested
    under key ``"tested"``.
    """
    d = _check_direction(direction)
    cand = _candidates(bvh, origin, d)
    if stats is not None:
        stats["tested"] = stats.get("tested", 0) + len(cand)
    ids, dist, front = intersect_triangles(m, cand, origin, d)
    return _nearest(m, ids, dist, front, origin, d)


def raycast_all(bvh: BVH, m: TriangleMesh, origin, direction):
    """Every hit along the ray, sorted by distance then triangle id."""
    d = _check_direction(direction)
    cand = _candidates(bvh, origin, d)
    ids, dist, front = intersect_triangles(m, cand, origin, d)
    order = np.lexsort((ids, dist))
    return [(int(ids[k]), float(dist[k]), bool(front[k])) for k in order]


def normal_at(bvh: BVH, m: TriangleMesh, probe_point, probe_axis) -> np.ndarray:
    """Face normal where the probe axis ray from ``probe_point`` meets the mesh."""
    hit = raycast(bvh, m, probe_point, probe_axis)
    if hit is None:
        raise NoContactError(
            f"probe ray from {np.asarray(probe_point).tolist()} misses the mesh"
        )
    return hit.normal
