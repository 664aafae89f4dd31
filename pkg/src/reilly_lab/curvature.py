"""Mean curvature, second fundamental form norm and scalar curvature.

Analytic values come from closed forms keyed by the corpus tag; the
discrete estimator exists only to cross-check them and never feeds the
bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import MetricData, SimplicialImmersion, SpaceForm, edge_vectors
from .spectrum import PLaplacian


@dataclass(frozen=True)
class CurvatureData:
    H: np.ndarray
    shifted: np.ndarray
    S: np.ndarray | None = None
    R: np.ndarray | None = None
    source: str = "analytic"


class MissingCurvature(ValueError):
    """No closed-form curvature is known for this immersion."""


def _const(V: int, value: float) -> np.ndarray:
    return np.full(V, float(value))


def _surface_from_principal(k1: np.ndarray, k2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    H = np.abs(k1 + k2) / 2
    return H, k1**2 + k2**2, 2 * k1 * k2


def _ellipsoid(x: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a, b, c = (float(params[k]) for k in ("a", "b", "c"))
    x = x - np.asarray(params.get("shift", (0.0, 0.0, 0.0)))
    h2 = x[:, 0] ** 2 / a**4 + x[:, 1] ** 2 / b**4 + x[:, 2] ** 2 / c**4
    abc2 = (a * b * c) ** 2
    K = 1.0 / (abc2 * h2**2)
    H = np.abs(np.sum(x**2, axis=1) - a * a - b * b - c * c) / (2 * abc2 * h2**1.5)
    return H, 4 * H**2 - 2 * K, 2 * K


def _torus(x: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    R, r = float(params["R"]), float(params["r"])
    cos_v = (np.hypot(x[:, 0], x[:, 1]) - R) / r
    k1 = np.full(len(x), 1.0 / r)
    k2 = cos_v / (R + r * cos_v)
    return _surface_from_principal(k1, k2)


def analytic_mean_curvature(imm: SimplicialImmersion) -> CurvatureData:
    """Closed-form H, S and R at every vertex of a corpus immersion."""
    tag = imm.corpus_tag or {}
    name = tag.get("name")
    params = tag.get("params", {})
    V, n, c = imm.num_vertices, imm.n, imm.c
    if name in ("round_sphere", "round_S3_in_R4"):
        r = float(params["r"])
        H, S, R = _const(V, 1 / r), _const(V, n / r**2), _const(V, n * (n - 1) / r**2)
    elif name == "clifford_torus":
        H, S, R = _const(V, 0.0), _const(V, 2.0), _const(V, 0.0)
    elif name == "geodesic_sphere_S3":
        r = float(params["r"])
        cot = math.cos(r) / math.sin(r)
        H, S, R = _const(V, abs(cot)), _const(V, 2 * cot**2), _const(V, 2 / math.sin(r) ** 2)
    elif name == "geodesic_sphere_H3":
        r = float(params["r"])
        coth = 1 / math.tanh(r)
        H, S, R = _const(V, coth), _const(V, 2 * coth**2), _const(V, 2 / math.sinh(r) ** 2)
    elif name == "ellipsoid":
        H, S, R = _ellipsoid(imm.vertices, params)
    elif name == "torus_of_revolution":
        H, S, R = _torus(imm.vertices, params)
    else:
        raise MissingCurvature(f"no analytic curvature for {name!r}")
    return CurvatureData(H=H, shifted=c + H**2, S=S, R=R, source="analytic")


def dual_volumes(imm: SimplicialImmersion, K) -> np.ndarray:
    """Circumcentric dual volume of every vertex, (1/2n) sum_j -K_ij |e_ij|^2."""
    K = K.tocoo()
    off = K.row != K.col
    e = imm.vertices[K.row[off]] - imm.vertices[K.col[off]]
    out = np.zeros(imm.num_vertices)
    np.add.at(out, K.row[off], -K.data[off] * imm.space_form.inner(e, e))
    return out / (2 * imm.n)


def discrete_laplacian_of_position(imm: SimplicialImmersion, md: MetricData) -> np.ndarray:
    """Cotangent-type Laplacian of each ambient coordinate, shape (V, coord_dim).

    The stiffness comes from the MetricData Gram matrices; the mass is the
    circumcentric dual volume, which keeps the estimate consistent at
    irregular vertices where the barycentric share is not.
    """
    K = PLaplacian(imm, md).stiffness
    return -(K @ imm.vertices) / dual_volumes(imm, K)[:, None]


def vertex_tangent_frames(imm: SimplicialImmersion, md: MetricData) -> np.ndarray:
    """Dominant n-dimensional span of the incident simplex tangent planes."""
    e = edge_vectors(imm)
    proj = np.einsum("ska,skl,slb->sab", e, md.gram_inv, e) * md.simplex_volumes[:, None, None]
    dim = imm.vertices.shape[1]
    acc = np.zeros((imm.num_vertices, dim, dim))
    for k in range(imm.n + 1):
        np.add.at(acc, imm.simplices[:, k], proj)
    _, vecs = np.linalg.eigh(acc)
    return vecs[:, :, -imm.n:]


def _remove_components(v: np.ndarray, basis: list[np.ndarray], sf: SpaceForm) -> np.ndarray:
    """Strip the span of ``basis`` from ``v`` in the model bilinear form."""
    ortho: list[np.ndarray] = []
    for b in basis:
        for q in ortho:
            b = b - (sf.inner(b, q) / sf.inner(q, q))[:, None] * q
        ortho.append(b)
    for q in ortho:
        v = v - (sf.inner(v, q) / sf.inner(q, q))[:, None] * q
    return v


def estimate_mean_curvature(imm: SimplicialImmersion, md: MetricData) -> CurvatureData:
    """Discrete |H| from the cotangent-type Laplacian of the position.

    The estimated tangent plane is removed from Delta x, and for c = +-1 the
    model position as well, since there Delta x also carries -c n x.
    """
    lap = discrete_laplacian_of_position(imm, md)
    sf = imm.space_form
    frames = vertex_tangent_frames(imm, md)
    basis = [frames[:, :, k] for k in range(imm.n)]
    if imm.c != 0:
        basis.insert(0, imm.vertices)
    normal = _remove_components(lap, basis, sf)
    H = np.sqrt(np.maximum(sf.inner(normal, normal), 0.0)) / imm.n
    return CurvatureData(H=H, shifted=imm.c + H**2, source="discrete")


def gauss_check(cd: CurvatureData, sf: SpaceForm, n: int) -> float:
    """Largest violation of R = n(n-1)c + n^2 H^2 - S over the vertices."""
    if cd.S is None or cd.R is None:
        raise ValueError("Gauss check needs S and R")
    res = cd.R - n * (n - 1) * sf.c - n * n * cd.H**2 + cd.S
    return float(np.max(np.abs(res)))
