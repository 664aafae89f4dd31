"""Shared, cached corpus meshes and verification runs for the test suite."""

from __future__ import annotations

import json
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from reilly_lab.bounds import VerifyOptions, verify
from reilly_lab.corpus import build_corpus_immersion
from reilly_lab.geometry import SimplicialImmersion, SpaceForm, induced_metric

# shape, params, default resolution used throughout the suite
CORPUS = [
    ("round_sphere", {}, 4),
    ("ellipsoid", {"a": 1.3, "b": 1.0, "c": 0.8}, 4),
    ("torus_of_revolution", {"R": 2.0, "r": 1.0}, None),
    ("clifford_torus", {}, 64),
    ("geodesic_sphere_S3", {"r": 1.0}, 4),
    ("geodesic_sphere_H3", {"r": 1.0}, 4),
    ("round_S3_in_R4", {"r": 1.0}, 3),
]
SHIFTED_ELLIPSOID = {"a": 1.3, "b": 1.0, "c": 0.8, "shift": [0.5, 0.0, 0.0]}


def _key(params: dict) -> str:
    return json.dumps(params, sort_keys=True)


@lru_cache(maxsize=None)
def _mesh(name: str, params_key: str, resolution: int | None):
    imm = build_corpus_immersion(name, json.loads(params_key), resolution)
    return imm, induced_metric(imm)


def mesh(name: str, params: dict | None = None, resolution: int | None = None):
    """Cached (immersion, metric) pair for a corpus shape."""
    return _mesh(name, _key(params or {}), resolution)


@lru_cache(maxsize=None)
def _verify(name: str, params_key: str, resolution: int | None, p: float, restarts: int):
    return verify(name, json.loads(params_key), resolution, [p], VerifyOptions(restarts=restarts))[0]


def verified(name: str, params: dict, resolution: int | None, p: float, restarts: int = 6):
    """Cached single-p verification report."""
    return _verify(name, _key(params), resolution, float(p), restarts)


def admissible_ps(n: int) -> list[float]:
    return [1.2, 1.5, 2.0] + ([2.5] if n == 3 else [])


def random_sphere_mesh(num: int, seed: int) -> SimplicialImmersion:
    """Convex-hull triangulation of random points on the unit sphere in R^3."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(num, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    cells = ConvexHull(x).simplices.copy()
    e1 = x[cells[:, 1]] - x[cells[:, 0]]
    e2 = x[cells[:, 2]] - x[cells[:, 0]]
    flip = np.einsum("ij,ij->i", np.cross(e1, e2), x[cells].mean(axis=1)) < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return SimplicialImmersion(SpaceForm(0, 3), 2, x, cells)


def random_s3_patchwork(seed: int) -> SimplicialImmersion:
    """Small closed 3-manifold: the boundary of a random 4-polytope in R^4."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(50, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    cells = ConvexHull(x).simplices.copy()
    pts = x[cells]
    det = np.linalg.det(np.concatenate([pts[:, 1:] - pts[:, :1], pts.mean(axis=1, keepdims=True)], axis=1))
    cells[det < 0] = cells[det < 0][:, [0, 2, 1, 3]]
    return SimplicialImmersion(SpaceForm(0, 4), 3, x, cells)
