"""Intrinsic triangle meshes of closed hyperbolic surfaces.

A mesh is defined purely by its combinatorics and the hyperbolic length of
every edge.  Finite-element quantities are computed from the Euclidean
triangle with the same three edge lengths, so no embedding is ever needed.
Chart coordinates in the Poincare disk may be carried along for plotting.
"""
from __future__ import annotations

import math
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

__all__ = [
    "MeshError",
    "TriMesh",
    "LaplaceOperator",
    "generate_genus2_mesh",
    "generate_polygon_surface",
    "assemble_laplacian",
    "geodesic_distance",
    "load_mesh",
    "write_mesh",
]

MESH_HEADER = "HYPMESH 1"
MIN_ANGLE = 1e-3


class MeshError(ValueError):
    """Raised when a mesh fails validation or cannot be parsed."""


class TriMesh:
    """Closed triangulated surface given by connectivity and edge lengths.

    Parameters
    ----------
    genus : int
        Declared genus, checked against the Euler characteristic.
    n_vertices : int
    triangles : (F, 3) int array
    edges : (E, 2) int array
        Sorted vertex pairs, one row per edge.
    lengths : (E,) float array
        Hyperbolic geodesic length of each edge.
    coords : (N,) complex array, optional
        Poincare-disk chart positions, cosmetic only.
    mesh_tolerance : float
        Allowed relative deviation of the discrete area from 4*pi*(genus-1).
    """

    def __init__(self, genus, n_vertices, triangles, edges, lengths,
                 coords=None, mesh_tolerance=0.1):
        self.genus = int(genus)
        self.n_vertices = int(n_vertices)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.lengths = np.asarray(lengths, dtype=float).ravel()
        self.coords = None if coords is None else np.asarray(coords, dtype=complex)
        self.mesh_tolerance = float(mesh_tolerance)
        self._validate()
        for arr in (self.triangles, self.edges, self.lengths):
            arr.flags.writeable = False

    # -- construction checks -------------------------------------------------
    def _validate(self):
        if self.genus < 2:
            raise MeshError(f"genus must be >= 2, got {self.genus}")
        V, F = self.n_vertices, len(self.triangles)
        if len(self.lengths) != len(self.edges):
            raise MeshError("edge/length count mismatch")
        if F == 0 or self.triangles.min() < 0 or self.triangles.max() >= V:
            raise MeshError("triangle vertex index out of range")
        if np.any(self.edges[:, 0] >= self.edges[:, 1]):
            raise MeshError("edges must be stored as sorted pairs without loops")
        for f, tri in enumerate(self.triangles):
            if len(set(tri.tolist())) != 3:
                raise MeshError(f"triangle {f} {tri.tolist()} repeats a vertex")
        if np.any(self.lengths <= 0) or not np.all(np.isfinite(self.lengths)):
            raise MeshError("edge lengths must be positive and finite")

        key = self.edges[:, 0] * V + self.edges[:, 1]
        order = np.argsort(key)
        if np.any(np.diff(key[order]) == 0):
            raise MeshError("duplicate edge in edge list")

        # each triangle side must be a listed edge, used by exactly two triangles
        tri_edge = self._triangle_edge_index(key, order)
        counts = np.bincount(tri_edge.ravel(), minlength=len(self.edges))
        bad = np.flatnonzero(counts != 2)
        if len(bad):
            e = self.edges[bad[0]].tolist()
            raise MeshError(f"mesh is not edge-manifold: edge {e} lies on {counts[bad[0]]} triangles")
        tri_key = np.sort(self.triangles, axis=1)
        tri_key = (tri_key[:, 0] * V + tri_key[:, 1]) * V + tri_key[:, 2]
        if len(np.unique(tri_key)) != F:
            raise MeshError("duplicate triangle")

        chi = V - len(self.edges) + F
        if chi != 2 - 2 * self.genus:
            raise MeshError(
                f"Euler check failed: V-E+F = {chi} but 2-2g = {2 - 2 * self.genus}")

        n_comp, _ = csgraph.connected_components(self.adjacency, directed=False)
        if n_comp != 1:
            raise MeshError(f"mesh is not connected ({n_comp} components)")

        self.triangle_edges = tri_edge
        ell = self.lengths[tri_edge]  # side opposite vertex k of each triangle
        a, b, c = ell[:, 0], ell[:, 1], ell[:, 2]
        viol = (a >= b + c) | (b >= a + c) | (c >= a + b)
        if np.any(viol):
            f = int(np.flatnonzero(viol)[0])
            raise MeshError(
                f"triangle inequality violated in triangle {f} {self.triangles[f].tolist()}")
        self.side_lengths = ell

        target = 4.0 * math.pi * (self.genus - 1)
        if abs(self.total_area - target) > self.mesh_tolerance * target:
            raise MeshError(
                f"area check failed: total area {self.total_area:.6g} vs 4*pi*(g-1) = {target:.6g}")

    def _triangle_edge_index(self, key, order):
        V = self.n_vertices
        t = self.triangles
        # side k is opposite vertex k
        pairs = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(pairs, axis=2)
        qkey = pairs[..., 0] * V + pairs[..., 1]
        pos = np.searchsorted(key[order], qkey)
        pos = np.clip(pos, 0, len(order) - 1)
        found = key[order][pos] == qkey
        if not np.all(found):
            f, k = np.argwhere(~found)[0]
            raise MeshError(
                f"triangle {f} {t[f].tolist()} uses edge {pairs[f, k].tolist()} missing from edge list")
        return order[pos]

    # -- geometry --------------------------------------------------------------
    @cached_property
    def triangle_areas(self):
        a, b, c = self.side_lengths.T
        s = 0.5 * (a + b + c)
        return np.sqrt(np.maximum(s * (s - a) * (s - b) * (s - c), 0.0))

    @cached_property
    def angles(self):
        """(F, 3) interior angles of the Euclidean comparison triangles."""
        ell = self.side_lengths
        out = np.empty_like(ell)
        for k in range(3):
            a = ell[:, k]
            b = ell[:, (k + 1) % 3]
            c = ell[:, (k + 2) % 3]
            out[:, k] = np.arccos(np.clip((b * b + c * c - a * a) / (2 * b * c), -1.0, 1.0))
        return out

    @cached_property
    def vertex_area(self):
        """Barycentric lumped quadrature weights."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.triangle_areas / 3.0, 3))
        return w

    @cached_property
    def total_area(self):
        return float(self.triangle_areas.sum())

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    @cached_property
    def mean_edge_length(self):
        return float(self.lengths.mean())

    @cached_property
    def adjacency(self):
        """Symmetric sparse matrix of edge lengths (the edge graph)."""
        i, j = self.edges.T
        A = sparse.coo_matrix((self.lengths, (i, j)), shape=(self.n_vertices,) * 2)
        return (A + A.T).tocsr()

    @cached_property
    def laplacian(self):
        return assemble_laplacian(self)

    # -- scalar fields ---------------------------------------------------------
    def integrate(self, f):
        return float(np.dot(self.vertex_area, f))

    def mean(self, f):
        return self.integrate(f) / self.total_area

    def zero_mean(self, f):
        return np.asarray(f, dtype=float) - self.mean(f)

    # -- distances -------------------------------------------------------------
    @cached_property
    def distance_graph(self):
        """Edge graph augmented with chords across each interior edge.

        For two triangles sharing edge ij with apexes k and l, the unfolded
        distance kl is added when the straight segment crosses ij.
        """
        rows, cols, vals = [], [], []
        tri, ell = self.triangles, self.side_lengths
        # per edge: the two (triangle, local vertex) pairs opposite it
        owner = np.argsort(self.triangle_edges.ravel(), kind="stable")
        pair = owner.reshape(-1, 2)
        f1, k1 = np.divmod(pair[:, 0], 3)
        f2, k2 = np.divmod(pair[:, 1], 3)
        # edge ij seen from triangle f1: i = vertex k1+1, j = vertex k1+2
        e = ell[f1, k1]
        a1 = ell[f1, (k1 + 2) % 3]  # |i - apex1|
        b1 = ell[f1, (k1 + 1) % 3]  # |j - apex1|
        i1 = tri[f1, (k1 + 1) % 3]
        # apex2 distances to the same i and j
        i2_is_i = tri[f2, (k2 + 1) % 3] == i1
        a2 = np.where(i2_is_i, ell[f2, (k2 + 2) % 3], ell[f2, (k2 + 1) % 3])
        b2 = np.where(i2_is_i, ell[f2, (k2 + 1) % 3], ell[f2, (k2 + 2) % 3])
        # place i at 0, j at (e, 0); apex1 above, apex2 below the edge
        x1 = (a1 ** 2 - b1 ** 2 + e ** 2) / (2 * e)
        y1 = np.sqrt(np.maximum(a1 ** 2 - x1 ** 2, 0.0))
        x2 = (a2 ** 2 - b2 ** 2 + e ** 2) / (2 * e)
        y2 = -np.sqrt(np.maximum(a2 ** 2 - x2 ** 2, 0.0))
        xc = x1 + (x2 - x1) * y1 / (y1 - y2)
        ok = (xc > 0) & (xc < e)
        d = np.hypot(x1 - x2, y1 - y2)
        p1 = tri[f1, k1][ok]
        p2 = tri[f2, k2][ok]
        rows += [self.edges[:, 0], self.edges[:, 1], p1, p2]
        cols += [self.edges[:, 1], self.edges[:, 0], p2, p1]
        vals += [self.lengths, self.lengths, d[ok], d[ok]]
        return _min_duplicates(rows, cols, vals, self.n_vertices)

    def distances_from(self, source, unfold=True):
        graph = self.distance_graph if unfold else self.adjacency
        return csgraph.dijkstra(graph, directed=False, indices=int(source))

    @cached_property
    def diameter(self):
        """Largest graph distance between two vertices."""
        D = csgraph.dijkstra(self.distance_graph, directed=False)
        return float(D.max())

    def __repr__(self):
        return (f"TriMesh(genus={self.genus}, V={self.n_vertices}, "
                f"E={self.n_edges}, F={self.n_triangles}, area={self.total_area:.6f})")


def _min_duplicates(rows, cols, vals, n):
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    key = r * n + c
    order = np.lexsort((v, key))
    key, r, c, v = key[order], r[order], c[order], v[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    return sparse.csr_matrix((v[first], (r[first], c[first])), shape=(n, n))


class LaplaceOperator:
    """Cotangent stiffness (realizing -Laplacian) and lumped mass."""

    def __init__(self, stiffness, mass_diag):
        self.stiffness = stiffness.tocsr()
        self.mass_diag = np.asarray(mass_diag, dtype=float)

    @property
    def mass(self):
        return sparse.diags(self.mass_diag)

    def dirichlet_energy(self, f):
        """Quadratic form f^T L f, approximating the integral of |grad f|^2."""
        return float(f @ (self.stiffness @ f))


def assemble_laplacian(mesh: TriMesh) -> LaplaceOperator:
    """Assemble the cotangent Laplacian from intrinsic edge lengths."""
    ang = mesh.angles
    if ang.min() < MIN_ANGLE:
        f = int(np.argmin(ang.min(axis=1)))
        raise MeshError(
            f"degenerate triangle {f} {mesh.triangles[f].tolist()}: "
            f"min angle {ang[f].min():.3g} < {MIN_ANGLE}")
    cot = 1.0 / np.tan(ang)
    t = mesh.triangles
    # weight of the side opposite vertex k joins vertices k+1, k+2
    i = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    j = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
    w = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])
    n = mesh.n_vertices
    W = sparse.coo_matrix((w, (i, j)), shape=(n, n))
    W = (W + W.T).tocsr()
    L = sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    return LaplaceOperator(L.tocsr(), mesh.vertex_area.copy())


def geodesic_distance(mesh: TriMesh, source: int, unfold: bool = True) -> np.ndarray:
    """Graph geodesic distance from ``source`` to every vertex (Dijkstra)."""
    return mesh.distances_from(source, unfold=unfold)


# ---------------------------------------------------------------------------
# Poincare-disk construction of regular 4g-gon surfaces
# ---------------------------------------------------------------------------

def _hdist(z1, z2):
    return 2.0 * np.arctanh(np.abs(z1 - z2) / np.abs(1.0 - np.conj(z1) * z2))


def _hmid(z1, z2):
    """Geodesic midpoint in the Poincare disk."""
    w = (z2 - z1) / (1.0 - np.conj(z1) * z2)
    r = np.abs(w)
    m = w * (np.tanh(0.5 * np.arctanh(r)) / r)
    return (m + z1) / (1.0 + np.conj(z1) * m)


def _subdivide(tris):
    """1 -> 4 midpoint subdivision of (F, 3) complex triangles."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = _hmid(a, b), _hmid(b, c), _hmid(c, a)
    return np.concatenate([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ])


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, x):
        p = self.parent
        root = x
        while p[root] != root:
            root = p[root]
        while p[x] != root:
            p[x], x = root, p[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _cosh_angle(a, b, c):
    """Hyperbolic angle between sides b and c, opposite side a."""
    val = (math.cosh(b) * math.cosh(c) - math.cosh(a)) / (math.sinh(b) * math.sinh(c))
    return math.acos(max(-1.0, min(1.0, val)))


def _euclid_angle(a, b, c):
    return math.acos(max(-1.0, min(1.0, (b * b + c * c - a * a) / (2 * b * c))))


def _intrinsic_delaunay(triangles, lengths, max_flips=1_000_000):
    """Flip edges until every cotangent weight is nonnegative.

    ``triangles`` are consistently oriented; ``lengths`` maps sorted vertex
    pairs to hyperbolic lengths and is updated in place.  New diagonals get
    their hyperbolic length from the hyperbolic law of cosines, so the mesh
    stays an intrinsic hyperbolic triangulation.
    """
    tris = [list(map(int, t)) for t in triangles]
    # directed edge (i, j) -> triangle containing it in that orientation
    half = {}
    for f, (a, b, c) in enumerate(tris):
        half[(a, b)] = f
        half[(b, c)] = f
        half[(c, a)] = f

    def apex(f, i, j):
        a, b, c = tris[f]
        return ({a, b, c} - {i, j}).pop()

    def L(i, j):
        return lengths[(i, j) if i < j else (j, i)]

    flips = 0
    changed = True
    while changed:
        # a flip blocked by an existing diagonal may become legal later,
        # so sweep until a full pass changes nothing
        changed = False
        queue = list(lengths.keys())
        while queue:
            i, j = queue.pop()
            if (i, j) not in lengths:
                continue
            f1, f2 = half[(i, j)], half[(j, i)]
            k, l = apex(f1, i, j), apex(f2, j, i)
            if k == l or ((k, l) if k < l else (l, k)) in lengths:
                continue
            e = L(i, j)
            gk = _euclid_angle(e, L(i, k), L(j, k))
            gl = _euclid_angle(e, L(i, l), L(j, l))
            if gk + gl <= math.pi + 1e-12:
                continue
            ti = _cosh_angle(L(j, k), L(i, k), e) + _cosh_angle(L(j, l), L(i, l), e)
            tj = _cosh_angle(L(i, k), L(j, k), e) + _cosh_angle(L(i, l), L(j, l), e)
            if ti >= math.pi or tj >= math.pi:
                continue
            d = math.acosh(math.cosh(L(i, k)) * math.cosh(L(i, l))
                           - math.sinh(L(i, k)) * math.sinh(L(i, l)) * math.cos(ti))
            # quad boundary is i -> l -> j -> k
            for key in ((i, j), (j, k), (k, i), (j, i), (i, l), (l, j)):
                half.pop(key, None)
            tris[f1] = [l, j, k]
            tris[f2] = [k, i, l]
            for f in (f1, f2):
                a, b, c = tris[f]
                half[(a, b)] = f
                half[(b, c)] = f
                half[(c, a)] = f
            del lengths[(i, j) if i < j else (j, i)]
            lengths[(k, l) if k < l else (l, k)] = d
            queue.extend([(i, k), (k, j), (j, l), (l, i)])
            changed = True
            flips += 1
            if flips > max_flips:
                raise MeshError("Delaunay flipping did not terminate")
    return np.array(tris, dtype=np.int64)


def generate_polygon_surface(genus: int, refinement_level: int = 0) -> TriMesh:
    """Surface of the regular hyperbolic 4g-gon with opposite sides glued.

    Interior angles are 2*pi/(4g), so all corners close up into a single
    cone-free vertex.  The base triangulation is the central fan subdivided
    twice (needed for a simplicial complex); each refinement level
    applies one more 1 -> 4 geodesic-midpoint subdivision.
    """
    if refinement_level < 0:
        raise ValueError("refinement_level must be >= 0")
    genus = int(genus)
    if genus < 2:
        raise MeshError(f"genus must be >= 2, got {genus}")
    n = 4 * genus
    alpha = 2.0 * math.pi / n
    R = math.acosh(1.0 / (math.tan(math.pi / n) * math.tan(alpha / 2)))
    r_in = math.acosh(math.cos(alpha / 2) / math.sin(math.pi / n))
    corners = math.tanh(R / 2) * np.exp(2j * math.pi * np.arange(n) / n)

    tris = np.stack([np.zeros(n, dtype=complex), corners, np.roll(corners, -1)], axis=1)
    for _ in range(refinement_level + 2):
        tris = _subdivide(tris)

    # merge coincident disk points
    pts = tris.ravel()
    scale = 1e9
    keys = np.round(pts.real * scale).astype(np.int64) * 4_000_000_001 + np.round(pts.imag * scale).astype(np.int64)
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    disk = pts[first]
    tri_idx = inv.reshape(-1, 3)

    # glue side k+n/2 onto side k by the translation through both midpoints
    uf = _UnionFind(len(disk))
    lookup = {k: i for i, k in enumerate(uniq)}
    edge_r = math.tanh(R / 2) * 0.5  # coarse filter radius for boundary points
    on_boundary = np.abs(disk) > edge_r
    bidx = np.flatnonzero(on_boundary)
    for k in range(n // 2):
        theta = 2 * math.pi * (k + 0.5) / n
        a = math.tanh(r_in) * np.exp(1j * theta)
        img = (disk[bidx] + a) / (1.0 + np.conj(a) * disk[bidx])
        ikeys = np.round(img.real * scale).astype(np.int64) * 4_000_000_001 + np.round(img.imag * scale).astype(np.int64)
        for src, key in zip(bidx, ikeys):
            dst = lookup.get(int(key))
            if dst is None:
                # rounding may straddle a grid line; fall back to a nearest search
                d = np.abs(disk[bidx] - (disk[src] + a) / (1.0 + np.conj(a) * disk[src]))
                m = int(np.argmin(d))
                if d[m] < 1e-7:
                    dst = bidx[m]
            if dst is not None:
                uf.union(src, dst)

    roots = np.array([uf.find(i) for i in range(len(disk))])
    _, rep_index, label = np.unique(roots, return_index=True, return_inverse=True)
    triangles = label[tri_idx]

    # edge lengths measured inside each disk triangle (gluings are isometries)
    t = tris
    side = np.stack([_hdist(t[:, 1], t[:, 2]), _hdist(t[:, 2], t[:, 0]), _hdist(t[:, 0], t[:, 1])], axis=1)
    pairs = np.stack([triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1)
    pairs = np.sort(pairs, axis=2).reshape(-1, 2)
    edges, einv = np.unique(pairs, axis=0, return_inverse=True)
    lengths = np.zeros(len(edges))
    lengths[einv.ravel()] = side.ravel()

    table = {(int(a), int(b)): float(x) for (a, b), x in zip(edges, lengths)}
    triangles = _intrinsic_delaunay(triangles, table)
    keys = sorted(table)
    edges = np.array(keys, dtype=np.int64)
    lengths = np.array([table[k] for k in keys])

    coords = disk[rep_index]
    return TriMesh(genus, len(rep_index), triangles, edges, lengths, coords=coords)


def generate_genus2_mesh(refinement_level: int) -> TriMesh:
    """Bolza surface: regular octagon with interior angles pi/4."""
    return generate_polygon_surface(2, refinement_level)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def write_mesh(mesh: TriMesh, path) -> None:
    lines = [MESH_HEADER, f"genus {mesh.genus}", f"vertices {mesh.n_vertices}"]
    tri = mesh.triangles
    for f in np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0])):
        i, j, k = tri[f]
        lines.append(f"triangle {i} {j} {k}")
    for e in np.lexsort((mesh.edges[:, 1], mesh.edges[:, 0])):
        i, j = mesh.edges[e]
        lines.append(f"edge {i} {j} {float(mesh.lengths[e])!r}")
    if mesh.coords is not None:
        for i, z in enumerate(mesh.coords):
            lines.append(f"coord {i} {float(z.real)!r} {float(z.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, mesh_tolerance: float = 0.1) -> TriMesh:
    """Read and validate a ``HYPMESH 1`` file."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MESH_HEADER:
        raise MeshError(f"{path}: missing '{MESH_HEADER}' header")
    genus = nverts = None
    tris, edges, lengths, coords = [], [], [], {}
    for lineno, raw in enumerate(text[1:], start=2):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            tag = parts[0]
            if tag == "genus":
                genus = int(parts[1])
            elif tag == "vertices":
                nverts = int(parts[1])
            elif tag == "triangle":
                tris.append([int(p) for p in parts[1:4]])
            elif tag == "edge":
                i, j = int(parts[1]), int(parts[2])
                edges.append([min(i, j), max(i, j)])
                lengths.append(float(parts[3]))
            elif tag == "coord":
                coords[int(parts[1])] = complex(float(parts[2]), float(parts[3]))
            else:
                raise MeshError(f"{path}:{lineno}: unknown record '{tag}'")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshError(f"{path}:{lineno}: cannot parse '{raw.strip()}'") from exc
    if genus is None or nverts is None:
        raise MeshError(f"{path}: missing genus or vertices line")
    c = None
    if coords:
        c = np.array([coords.get(i, np.nan) for i in range(nverts)], dtype=complex)
    return TriMesh(genus, nverts, tris, edges, lengths, coords=c, mesh_tolerance=mesh_tolerance)
