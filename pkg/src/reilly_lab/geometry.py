"""Model spaces, simplicial immersions and their induced metrics.

Coordinates follow one convention per curvature sign:

* ``c = 0``: Cartesian coordinates in R^N.
* ``c = 1``: the unit sphere in R^(N+1).
* ``c = -1``: the upper sheet of the hyperboloid <x, x> = -1 in Minkowski
  space R^(N,1), with ``x[0]`` the time coordinate.

Edge vectors are ambient chords and every inner product goes through
:meth:`SpaceForm.inner`, so the same assembly serves all three models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any

import numpy as np

MODEL_TOL = 1e-12


class MeshError(ValueError):
    """Raised when a mesh violates a structural or metric invariant."""


@dataclass(frozen=True)
class SpaceForm:
    c: int
    N: int

    def __post_init__(self) -> None:
        if self.c not in (-1, 0, 1):
            raise ValueError(f"curvature must be -1, 0 or 1, got {self.c}")
        if self.N < 2:
            raise ValueError(f"ambient dimension must be >= 2, got {self.N}")

    @property
    def coord_dim(self) -> int:
        """Length of a coordinate vector in the model."""
        return self.N if self.c == 0 else self.N + 1

    @property
    def signature(self) -> np.ndarray:
        """Diagonal of the ambient bilinear form."""
        sig = np.ones(self.coord_dim)
        if self.c == -1:
            sig[0] = -1.0
        return sig

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Ambient bilinear form along the last axis."""
        return np.sum(a * b * self.signature, axis=-1)

    def constraint_residual(self, x: np.ndarray) -> np.ndarray:
        """Per-point deviation from the model constraint (zero for c = 0)."""
        x = np.atleast_2d(x)
        if self.c == 0:
            return np.zeros(len(x))
        if self.c == 1:
            return np.abs(np.sum(x * x, axis=-1) - 1.0)
        res = np.abs(self.inner(x, x) + 1.0)
        return np.where(x[:, 0] > 0, res, np.inf)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Re-project points onto the model constraint."""
        x = np.array(x, dtype=float)
        if self.c == 1:
            return x / np.linalg.norm(x, axis=-1, keepdims=True)
        if self.c == -1:
            x[..., 0] = np.sqrt(1.0 + np.sum(x[..., 1:] ** 2, axis=-1))
        return x

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Geodesic distance in the model."""
        if self.c == 0:
            return np.linalg.norm(a - b, axis=-1)
        if self.c == 1:
            return np.arccos(np.clip(np.sum(a * b, axis=-1), -1.0, 1.0))
        return np.arccosh(np.maximum(-self.inner(a, b), 1.0))


@dataclass(frozen=True)
class SimplicialImmersion:
    """A closed oriented simplicial n-manifold immersed in a space form.

    ``corpus_tag`` carries the analytic source (``{"name": ..., "params":
    {...}}``) when the mesh came from the corpus; curvature formulas key off
    it.
    """

    space_form: SpaceForm
    n: int
    vertices: np.ndarray
    simplices: np.ndarray
    corpus_tag: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        simp = np.ascontiguousarray(self.simplices, dtype=np.int64)
        verts.setflags(write=False)
        simp.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "simplices", simp)
        if self.n not in (2, 3):
            raise MeshError(f"intrinsic dimension must be 2 or 3, got {self.n}")
        if verts.ndim != 2 or verts.shape[1] != self.space_form.coord_dim:
            raise MeshError(
                f"vertices must have shape (V, {self.space_form.coord_dim}), got {verts.shape}"
            )
        if simp.ndim != 2 or simp.shape[1] != self.n + 1:
            raise MeshError(f"simplices must have shape (S, {self.n + 1}), got {simp.shape}")
        if simp.size and (simp.min() < 0 or simp.max() >= len(verts)):
            raise MeshError("simplex refers to a missing vertex")

    @property
    def c(self) -> int:
        return self.space_form.c

    @property
    def N(self) -> int:
        return self.space_form.N

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_simplices(self) -> int:
        return len(self.simplices)

    def transformed(self, matrix: np.ndarray) -> "SimplicialImmersion":
        """Apply a linear ambient map (an isometry of the model, typically)."""
        return SimplicialImmersion(
            self.space_form, self.n, self.vertices @ np.asarray(matrix).T,
            self.simplices, self.corpus_tag,
        )


@dataclass(frozen=True)
class MetricData:
    gram: np.ndarray
    gram_inv: np.ndarray
    simplex_volumes: np.ndarray
    vertex_weights: np.ndarray
    total: float

    @property
    def vol(self) -> float:
        return self.total


@dataclass
class MeshDiagnostics:
    boundary_faces: list[tuple[int, ...]] = field(default_factory=list)
    orientation_conflicts: list[tuple[int, ...]] = field(default_factory=list)
    nonmanifold_faces: list[tuple[int, ...]] = field(default_factory=list)
    degenerate_simplices: list[int] = field(default_factory=list)
    off_model_vertices: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.boundary_faces or self.orientation_conflicts or self.nonmanifold_faces
            or self.degenerate_simplices or self.off_model_vertices
        )

    def summary(self) -> dict[str, int]:
        return {
            "boundary_faces": len(self.boundary_faces),
            "orientation_conflicts": len(self.orientation_conflicts),
            "nonmanifold_faces": len(self.nonmanifold_faces),
            "degenerate_simplices": len(self.degenerate_simplices),
            "off_model_vertices": len(self.off_model_vertices),
        }


def edge_vectors(imm: SimplicialImmersion) -> np.ndarray:
    """Chords x_k - x_0 of every simplex, shape (S, n, coord_dim)."""
    x = imm.vertices[imm.simplices]
    return x[:, 1:, :] - x[:, :1, :]


def gram_matrices(imm: SimplicialImmersion) -> np.ndarray:
    e = edge_vectors(imm)
    sig = imm.space_form.signature
    return np.einsum("ska,sla,a->skl", e, e, sig)


def induced_metric(imm: SimplicialImmersion) -> MetricData:
    """Per-simplex Gram matrices, volumes and lumped vertex weights.

    Raises :class:`MeshError` if any Gram matrix fails to be positive
    definite.
    """
    gram = gram_matrices(imm)
    n = imm.n
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise MeshError("induced Gram matrix is not positive definite") from exc
    diag = np.diagonal(chol, axis1=1, axis2=2)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise MeshError("induced Gram matrix is not positive definite")
    volumes = np.prod(diag, axis=1) / math.factorial(n)
    gram_inv = np.linalg.inv(gram)
    weights = np.zeros(imm.num_vertices)
    share = volumes / (n + 1)
    for k in range(n + 1):
        np.add.at(weights, imm.simplices[:, k], share)
    for arr in (gram, gram_inv, volumes, weights):
        arr.setflags(write=False)
    return MetricData(gram, gram_inv, volumes, weights, float(np.sum(volumes)))


def volume(md: MetricData) -> float:
    return md.total


def _face_key(simplex: np.ndarray, omit: int) -> tuple[tuple[int, ...], int]:
    """Sorted face and the sign of its induced orientation."""
    face = [int(v) for i, v in enumerate(simplex) if i != omit]
    sign = -1 if omit % 2 else 1
    # parity of the sorting permutation
    perm = sorted(range(len(face)), key=face.__getitem__)
    visited = [False] * len(perm)
    for i in range(len(perm)):
        if visited[i]:
            continue
        j, cycle = i, 0
        while not visited[j]:
            visited[j] = True
            j = perm[j]
            cycle += 1
        if cycle % 2 == 0:
            sign = -sign
    return tuple(sorted(face)), sign


def validate_closed_oriented(imm: SimplicialImmersion, degenerate_tol: float = 0.0) -> MeshDiagnostics:
    """Report boundary faces, orientation conflicts and degenerate simplices.

    The diagnostics are empty exactly when the mesh is closed, consistently
    oriented, non-degenerate and on the model.
    """
    diag = MeshDiagnostics()
    faces: dict[tuple[int, ...], list[int]] = {}
    for simplex in imm.simplices:
        for omit in range(imm.n + 1):
            key, sign = _face_key(simplex, omit)
            faces.setdefault(key, []).append(sign)
    for key, signs in faces.items():
        if len(signs) == 1:
            diag.boundary_faces.append(key)
        elif len(signs) > 2:
            diag.nonmanifold_faces.append(key)
        elif signs[0] == signs[1]:
            diag.orientation_conflicts.append(key)

    gram = gram_matrices(imm)
    dets = np.linalg.det(gram) if len(gram) else np.zeros(0)
    vols = np.sqrt(np.clip(dets, 0.0, None)) / math.factorial(imm.n)
    diag.degenerate_simplices = [int(i) for i in np.flatnonzero((dets <= 0) | (vols <= degenerate_tol))]

    res = imm.space_form.constraint_residual(imm.vertices)
    diag.off_model_vertices = [int(i) for i in np.flatnonzero(res > MODEL_TOL)]
    return diag


def edges(imm: SimplicialImmersion) -> np.ndarray:
    """Unique undirected edges (i < j), sorted lexicographically."""
    pairs = [imm.simplices[:, [a, b]] for a, b in combinations(range(imm.n + 1), 2)]
    e = np.sort(np.concatenate(pairs), axis=1)
    return np.unique(e, axis=0)


# --- Mesh JSON -------------------------------------------------------------

def to_json_dict(imm: SimplicialImmersion, analytic: dict[str, Any] | None = None) -> dict[str, Any]:
    out: dict[str, Any] = {
        "model": {"c": imm.c, "N": imm.N},
        "n": imm.n,
        "vertices": imm.vertices.tolist(),
        "simplices": imm.simplices.tolist(),
    }
    if analytic is not None:
        out["analytic"] = {k: v.tolist() if isinstance(v, np.ndarray) else v for k, v in analytic.items()}
    return out


def from_json_dict(data: dict[str, Any]) -> SimplicialImmersion:
    try:
        sf = SpaceForm(int(data["model"]["c"]), int(data["model"]["N"]))
        n = int(data["n"])
        verts = np.asarray(data["vertices"], dtype=float)
        simp = np.asarray(data["simplices"], dtype=np.int64)
    except (KeyError, TypeError) as exc:
        raise MeshError(f"malformed mesh JSON: {exc}") from exc
    tag = None
    analytic = data.get("analytic")
    if analytic:
        tag = {"name": analytic.get("name"), "params": dict(analytic.get("params", {}))}
    return SimplicialImmersion(sf, n, verts, simp, tag)


def save_mesh(imm: SimplicialImmersion, path: str | Path, analytic: dict[str, Any] | None = None) -> None:
    Path(path).write_text(json.dumps(to_json_dict(imm, analytic)), encoding="utf-8")


def load_mesh(path: str | Path) -> SimplicialImmersion:
    return from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))
