"""Analytic test immersions and their deterministic meshes."""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations, permutations, product
from typing import Any, Callable

import numpy as np

from .geometry import MODEL_TOL, MeshError, SimplicialImmersion, SpaceForm, gram_matrices

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

MAX_ICO_LEVEL = 5  # 10242 vertices
MAX_S3_LEVEL = 3  # 2760 vertices
MAX_GRID = 140  # 19600 vertices


def _cliques(points: np.ndarray, edge_len: float, size: int) -> list[tuple[int, ...]]:
    """All ``size``-cliques of the graph joining points at distance ``edge_len``."""
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    adj = np.abs(d - edge_len) < 1e-9
    nbrs = [set(np.flatnonzero(row).tolist()) for row in adj]
    out = []

    def grow(clique: list[int], cand: set[int]) -> None:
        if len(clique) == size:
            out.append(tuple(clique))
            return
        for v in sorted(cand):
            if v > clique[-1]:
                grow(clique + [v], cand & nbrs[v])

    for v in range(len(points)):
        grow([v], nbrs[v])
    return out


def _orient_outward(points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Flip cells so the cone from the origin has positive orientation."""
    cells = np.array(cells, dtype=np.int64)
    dets = np.linalg.det(points[cells])
    flip = dets < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()
    return cells


@lru_cache(maxsize=None)
def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere by repeated midpoint subdivision; 10*4^level + 2 vertices."""
    if not 0 <= level <= MAX_ICO_LEVEL:
        raise MeshError(f"icosphere level must be in [0, {MAX_ICO_LEVEL}], got {level}")
    base = []
    for s1, s2 in product((-1.0, 1.0), repeat=2):
        base += [(0.0, s1, s2 * GOLDEN), (s1, s2 * GOLDEN, 0.0), (s2 * GOLDEN, 0.0, s1)]
    pts = np.array(base)
    faces = _orient_outward(pts, _cliques(pts, 2.0, 3))
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)

    verts = [tuple(p) for p in pts]
    tris = [tuple(f) for f in faces.tolist()]
    for _ in range(level):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = np.add(verts[a], verts[b])
                m = m / np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new
    return np.array(verts), np.array(tris, dtype=np.int64)


def _six_hundred_cell() -> np.ndarray:
    pts = []
    for i in range(4):
        for s in (-1.0, 1.0):
            v = [0.0] * 4
            v[i] = s
            pts.append(v)
    pts += [list(s) for s in product((-0.5, 0.5), repeat=4)]
    base = (GOLDEN / 2, 0.5, 1 / (2 * GOLDEN), 0.0)
    even = [p for p in permutations(range(4)) if _parity(p) == 0]
    seen = set()
    for p in even:
        for signs in product((-1.0, 1.0), repeat=3):
            v = [0.0] * 4
            for slot, src in enumerate(p):
                val = base[src]
                if src < 3:
                    val *= signs[src]
                v[slot] = val
            key = tuple(round(x, 12) for x in v)
            if key not in seen:
                seen.add(key)
                pts.append(v)
    arr = np.array(pts)
    assert arr.shape == (120, 4)
    return arr


def _parity(perm: tuple[int, ...]) -> int:
    inv = sum(1 for i, j in combinations(range(len(perm)), 2) if perm[i] > perm[j])
    return inv % 2


def _kuhn_pattern(dim: int, k: int) -> list[list[tuple[int, ...]]]:
    """Freudenthal subdivision of the ordered dim-simplex into k^dim pieces.

    Each piece is a list of integer barycentric coordinates summing to k.
    The pattern induced on every face depends only on the vertex order, so
    neighbouring simplices that agree on vertex order subdivide conformally.
    """

    def inside(y: tuple[int, ...]) -> bool:
        return all(y[i] >= y[i + 1] for i in range(dim - 1)) and k >= y[0] and y[-1] >= 0

    def bary(y: tuple[int, ...]) -> tuple[int, ...]:
        return (k - y[0],) + tuple(y[i] - y[i + 1] for i in range(dim - 1)) + (y[-1],)

    pieces = []
    for z in product(range(k), repeat=dim):
        for perm in permutations(range(dim)):
            cur = list(z)
            pts = [tuple(cur)]
            for a in perm:
                cur[a] += 1
                pts.append(tuple(cur))
            if all(inside(p) for p in pts):
                pieces.append([bary(p) for p in pts])
    return pieces


@lru_cache(maxsize=None)
def s3_mesh(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Centrally symmetric tetrahedral mesh of the unit S^3 in R^4.

    The 600-cell is subdivided ``level`` times per edge (Freudenthal) and
    projected radially. Vertex counts: 120, 840, 2760 for levels 1..3.
    """
    if not 1 <= level <= MAX_S3_LEVEL:
        raise MeshError(f"S^3 level must be in [1, {MAX_S3_LEVEL}], got {level}")
    base = _six_hundred_cell()
    cells = _cliques(base, 1.0 / GOLDEN, 4)
    # order by antipodal-pair rank so x -> -x commutes with the subdivision
    pair_rank = {}
    for i, p in enumerate(base):
        j = int(np.argmin(np.linalg.norm(base + p, axis=1)))
        pair_rank[i] = min(i, j)

    pattern = _kuhn_pattern(3, level)
    index: dict[tuple[tuple[int, int], ...], int] = {}
    verts: list[np.ndarray] = []
    tets = []
    for cell in cells:
        order = sorted(cell, key=lambda v: pair_rank[v])
        for piece in pattern:
            ids = []
            for lam in piece:
                key = tuple(sorted((order[i], l) for i, l in enumerate(lam) if l))
                if key not in index:
                    x = sum(l * base[g] for g, l in key) / level
                    index[key] = len(verts)
                    verts.append(x / np.linalg.norm(x))
                ids.append(index[key])
            tets.append(ids)
    pts = np.array(verts)
    return pts, _orient_outward(pts, np.array(tets))


def torus_grid(m: int, k: int) -> np.ndarray:
    """Triangles of an m-by-k periodic grid with vertex index i*k + j."""
    if m < 3 or k < 3:
        raise MeshError("torus grid needs at least 3 samples per direction")
    tris = []
    for i in range(m):
        for j in range(k):
            a = i * k + j
            b = ((i + 1) % m) * k + j
            c = ((i + 1) % m) * k + (j + 1) % k
            d = i * k + (j + 1) % k
            tris += [(a, b, c), (a, c, d)]
    return np.array(tris, dtype=np.int64)


def _grid_angles(m: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    u = 2 * np.pi * np.arange(m) / m
    v = 2 * np.pi * np.arange(k) / k
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return uu.ravel(), vv.ravel()


def _pad(x: np.ndarray, dim: int) -> np.ndarray:
    if x.shape[1] > dim:
        raise MeshError(f"ambient dimension {dim} too small for a {x.shape[1]}-coordinate shape")
    out = np.zeros((len(x), dim))
    out[:, : x.shape[1]] = x
    return out


# --- Builders --------------------------------------------------------------

def _round_sphere(params: dict[str, Any], resolution: int | None):
    n = int(params.get("n", 2))
    r = float(params.get("r", 1.0))
    N = int(params.get("N", n + 1))
    if r <= 0:
        raise MeshError("radius must be positive")
    if n == 2:
        pts, cells = icosphere(4 if resolution is None else resolution)
    elif n == 3:
        pts, cells = s3_mesh(3 if resolution is None else resolution)
    else:
        raise MeshError("round_sphere supports n = 2 or 3")
    return SpaceForm(0, N), n, _pad(r * pts, N), cells, {"n": n, "r": r, "N": N}


def _round_s3(params: dict[str, Any], resolution: int | None):
    r = float(params.get("r", 1.0))
    sf, n, x, cells, _ = _round_sphere({"n": 3, "r": r, "N": 4}, resolution)
    return sf, n, x, cells, {"r": r}


def _ellipsoid(params: dict[str, Any], resolution: int | None):
    axes = np.array([float(params.get(k, 1.0)) for k in ("a", "b", "c")])
    if np.any(axes <= 0):
        raise MeshError("ellipsoid semi-axes must be positive")
    shift = np.asarray(params.get("shift", (0.0, 0.0, 0.0)), dtype=float)
    pts, cells = icosphere(4 if resolution is None else resolution)
    out = {"a": axes[0], "b": axes[1], "c": axes[2]}
    if np.any(shift):
        out["shift"] = shift.tolist()
    return SpaceForm(0, 3), 2, pts * axes + shift, cells, out


def _torus(params: dict[str, Any], resolution: int | None):
    R = float(params.get("R", 2.0))
    r = float(params.get("r", 1.0))
    if not 0 < r < R:
        raise MeshError(f"torus of revolution needs 0 < r < R, got R={R}, r={r}")
    m = 96 if resolution is None else resolution
    k = int(params.get("grid_v", max(3, round(m * r / R))))
    _check_grid(m, k)
    u, v = _grid_angles(m, k)
    rho = R + r * np.cos(v)
    x = np.stack([rho * np.cos(u), rho * np.sin(u), r * np.sin(v)], axis=1)
    return SpaceForm(0, 3), 2, x, torus_grid(m, k), {"R": R, "r": r, "grid_v": k}


def _clifford(params: dict[str, Any], resolution: int | None):
    m = 64 if resolution is None else resolution
    _check_grid(m, m)
    u, v = _grid_angles(m, m)
    x = np.stack([np.cos(u), np.sin(u), np.cos(v), np.sin(v)], axis=1) / math.sqrt(2.0)
    return SpaceForm(1, 3), 2, x, torus_grid(m, m), {}


def _geodesic_sphere(c: int) -> Callable:
    def build(params: dict[str, Any], resolution: int | None):
        r = float(params.get("r", 1.0))
        if r <= 0 or (c == 1 and r >= math.pi):
            raise MeshError(f"geodesic sphere radius out of range: {r}")
        pts, cells = icosphere(4 if resolution is None else resolution)
        if c == 1:
            x = np.concatenate([np.full((len(pts), 1), math.cos(r)), math.sin(r) * pts], axis=1)
        else:
            x = np.concatenate([np.full((len(pts), 1), math.cosh(r)), math.sinh(r) * pts], axis=1)
        return SpaceForm(c, 3), 2, x, cells, {"r": r}

    return build


def _check_grid(m: int, k: int) -> None:
    if m * k > MAX_GRID**2:
        raise MeshError(f"grid {m}x{k} exceeds the {MAX_GRID**2}-vertex limit")


BUILDERS: dict[str, Callable] = {
    "round_sphere": _round_sphere,
    "ellipsoid": _ellipsoid,
    "torus_of_revolution": _torus,
    "clifford_torus": _clifford,
    "geodesic_sphere_S3": _geodesic_sphere(1),
    "geodesic_sphere_H3": _geodesic_sphere(-1),
    "round_S3_in_R4": _round_s3,
}

CORPUS_DOC = {
    "round_sphere": "S^n(r) in R^N; params n (2|3), r, N; resolution = icosphere level (n=2) or S^3 level (n=3)",
    "ellipsoid": "ellipsoid with semi-axes a, b, c in R^3 (optional shift); resolution = icosphere level",
    "torus_of_revolution": "torus with radii R > r in R^3; resolution = samples around the axis",
    "clifford_torus": "minimal flat torus in S^3; resolution = grid samples per angle",
    "geodesic_sphere_S3": "geodesic 2-sphere of radius r in S^3; resolution = icosphere level",
    "geodesic_sphere_H3": "geodesic 2-sphere of radius r in H^3; resolution = icosphere level",
    "round_S3_in_R4": "round 3-sphere of radius r in R^4; resolution = S^3 subdivision level",
}


def corpus_names() -> list[str]:
    return list(BUILDERS)


def build_corpus_immersion(
    name: str, params: dict[str, Any] | None = None, resolution: int | None = None
) -> SimplicialImmersion:
    """Mesh one of the analytic corpus shapes.

    >>> imm = build_corpus_immersion("round_sphere", {"n": 2, "r": 1.0, "N": 3}, 4)
    >>> imm.num_vertices, imm.num_simplices
    (2562, 5120)
    """
    if name not in BUILDERS:
        raise MeshError(f"unknown corpus shape {name!r}; choose from {', '.join(BUILDERS)}")
    sf, n, x, cells, full_params = BUILDERS[name](dict(params or {}), resolution)
    x = sf.project(x)
    if np.any(sf.constraint_residual(x) > MODEL_TOL):
        raise MeshError("generated vertices leave the model constraint")
    imm = SimplicialImmersion(sf, n, x, cells, {"name": name, "params": full_params})
    dets = np.linalg.det(gram_matrices(imm))
    if np.any(dets <= 0):
        raise MeshError(f"{name} at resolution {resolution} produced degenerate simplices")
    return imm

