"""Conformal maps to the unit sphere and p-barycentric balancing.

An immersion into any space form is sent to S^N by a fixed conformal map
(identity, inverse stereographic projection, or hyperboloid -> ball ->
sphere) and then by a Moebius map gamma_t^a that scales stereographic
coordinates about the pole a by e^t. Balancing searches the Moebius
parameter so that every coordinate of the image has vanishing p-mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .curvature import CurvatureData
from .geometry import MetricData, SimplicialImmersion
from .spectrum import signed_power

BALL_EDGE = 1e-6
POLE_TOL = 1e-12
# coordinates this small are rounding noise of exact zeros; |t|^(p-1) would
# amplify them (1e-16 -> 1e-8 at p = 1.5)
ZERO_SNAP = 1e-14


class BalancingError(RuntimeError):
    """The balancing search degenerated (mass concentrating at a point)."""


@dataclass(frozen=True)
class MoebiusParam:
    """Moebius map gamma_t^a stored as the ball point b = (1 - e^-t) a."""

    b: np.ndarray

    def __post_init__(self) -> None:
        b = np.array(self.b, dtype=float)
        if not np.linalg.norm(b) < 1.0:
            raise ValueError("ball parameter must lie in the open unit ball")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls, dim: int) -> "MoebiusParam":
        return cls(np.zeros(dim))

    @classmethod
    def from_pole(cls, a: np.ndarray, t: float) -> "MoebiusParam":
        a = np.asarray(a, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-14 * 10:
            raise ValueError("pole must be a unit vector")
        if t < 0:
            raise ValueError("flow time must be nonnegative")
        return cls(-np.expm1(-t) * a)

    @property
    def t(self) -> float:
        return float(-np.log1p(-np.linalg.norm(self.b)))

    @property
    def a(self) -> np.ndarray:
        nb = np.linalg.norm(self.b)
        if nb == 0:
            out = np.zeros_like(self.b)
            out[-1] = 1.0
            return out
        return self.b / nb


def moebius_apply(m: MoebiusParam, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply gamma_t^a to points of S^N; also return the log conformal factor.

    With s = <x, a> and x_perp = x - s a, conjugating by the stereographic
    projection from a gives

        gamma(x) = (2 x_perp + (e^t (1+s) - e^-t (1-s)) a) / (e^t (1+s) + e^-t (1-s))

    and gamma^* h = e^(2 f) h with e^f = 2 / (e^t (1+s) + e^-t (1-s)).
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if m.t > 0 and np.any(np.linalg.norm(pts - m.a, axis=1) < POLE_TOL):
        raise ValueError("point coincides with the Moebius pole")
    return _moebius(m, pts)


def _moebius(m: MoebiusParam, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # the closed form stays finite at the pole, which balancing relies on
    t = m.t
    if t == 0.0:
        return pts.copy(), np.zeros(len(pts))
    a = m.a
    s = pts @ a
    perp = pts - s[:, None] * a
    ep, em = np.exp(t), np.exp(-t)
    den = ep * (1 + s) + em * (1 - s)
    out = (2 * perp + ((ep * (1 + s) - em * (1 - s)))[:, None] * a) / den[:, None]
    # re-project against rounding drift
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out, np.log(2.0 / den)


def model_to_sphere(x: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
    """Standard conformal map of model points into S^N and its log factor rho0.

    c = 1: identity. c = 0: inverse stereographic projection, e^rho0 =
    2 / (1 + |x|^2). c = -1: hyperboloid -> Poincare ball y = x_s/(1 + x0)
    -> inverse stereographic projection, which collapses to
    (x_s, -1) / x0 with e^rho0 = 1 / x0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if c == 1:
        return x.copy(), np.zeros(len(x))
    if c == 0:
        r2 = np.sum(x * x, axis=1)
        out = np.concatenate([2 * x, (r2 - 1)[:, None]], axis=1) / (1 + r2)[:, None]
        return out, np.log(2.0 / (1 + r2))
    if c == -1:
        x0 = x[:, 0]
        out = np.concatenate([x[:, 1:], -np.ones((len(x), 1))], axis=1) / x0[:, None]
        return out, -np.log(x0)
    raise ValueError(f"curvature must be -1, 0 or 1, got {c}")


def to_sphere(imm: SimplicialImmersion) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of the immersion mapped into S^N, with rho0 per vertex."""
    return model_to_sphere(imm.vertices, imm.c)


def p_barycenter(phi: np.ndarray, weights: np.ndarray, p: float) -> np.ndarray:
    """Lumped integrals of |Phi^A|^(p-2) Phi^A for every coordinate A."""
    phi = np.where(np.abs(phi) < ZERO_SNAP, 0.0, phi)
    return weights @ signed_power(phi, p - 1)


@dataclass
class BalancedMap:
    phi: np.ndarray
    rho: np.ndarray
    residual: np.ndarray
    p: float
    moebius: MoebiusParam
    base_map_tag: str
    n: int
    converged: bool = True
    iterations: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))


_BASE_TAG = {1: "identity", 0: "inverse_stereographic", -1: "hyperboloid_ball_stereographic"}


def compose(imm: SimplicialImmersion, md: MetricData, p: float, m: MoebiusParam | None = None) -> BalancedMap:
    """Image of the immersion under gamma(m) o Pi_c, balanced or not."""
    base, rho0 = to_sphere(imm)
    m = MoebiusParam.identity(base.shape[1]) if m is None else m
    phi, logf = _moebius(m, base)
    return BalancedMap(
        phi=phi,
        rho=rho0 + logf,
        residual=p_barycenter(phi, md.vertex_weights, p),
        p=p,
        moebius=m,
        base_map_tag=_BASE_TAG[imm.c],
        n=imm.n,
    )


def balance(
    imm: SimplicialImmersion,
    md: MetricData,
    p: float,
    tol: float = 1e-8,
    max_newton: int = 100,
    damping: int = 30,
    fd_step: float = 1e-6,
) -> BalancedMap:
    """Find a Moebius map whose image has zero p-barycenter in every coordinate.

    Damped Newton on the ball parameter with a central finite-difference
    Jacobian. Two Newton directions are formed, one from F and one from the
    de-powered residual sign(F)|F|^(1/(p-1)), which stays linear in b when a
    whole coordinate vanishes at the root (umbilic images). Each direction
    is tried with halving steps and the trial with the smallest |F| wins.
    If none reduces |F|, a short move of b along -F/|F| is tried instead.
    Succeeds once |F| <= tol * vol(M).
    """
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    base, _ = to_sphere(imm)
    w = md.vertex_weights
    dim = base.shape[1]
    target = tol * md.vol
    scale = md.vol

    def residual(b: np.ndarray) -> np.ndarray:
        phi, _ = _moebius(MoebiusParam(b), base)
        return p_barycenter(phi, w, p)

    def depowered(f: np.ndarray) -> np.ndarray:
        return signed_power(f / scale, 1.0 / (p - 1))

    b = np.zeros(dim)
    f = residual(b)
    history = [float(np.linalg.norm(f))]
    it = 0
    while history[-1] > target and it < max_newton:
        it += 1
        jac_f = np.empty((dim, dim))
        jac_g = np.empty((dim, dim))
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = fd_step
            fp, fm = residual(_clip(b + e)), residual(_clip(b - e))
            jac_f[:, k] = (fp - fm) / (2 * fd_step)
            jac_g[:, k] = (depowered(fp) - depowered(fm)) / (2 * fd_step)
        directions = [np.linalg.lstsq(jac_f, -f, rcond=None)[0]]
        if p != 2:
            directions.append(np.linalg.lstsq(jac_g, -depowered(f), rcond=None)[0])
        best = _best_trial(residual, b, directions, damping, history[-1])
        if best is None:
            direction = -f / np.linalg.norm(f)
            eta = 1e-2 * (1 - np.linalg.norm(b))
            best = _best_trial(residual, b, [eta * direction], damping, history[-1])
        if best is None:
            break
        b, f = best
        history.append(float(np.linalg.norm(f)))
        if np.linalg.norm(b) > 1 - BALL_EDGE:
            raise BalancingError("balancing map concentrates mass at a point")

    bm = compose(imm, md, p, MoebiusParam(b))
    bm.converged = bool(bm.residual_norm <= target)
    bm.iterations = it
    bm.history = history
    return bm


def _best_trial(residual, b, directions, damping, current):
    """Smallest-residual point among halved steps along each direction."""
    best = None
    best_norm = current
    for delta in directions:
        step = 1.0
        for _ in range(damping):
            trial = b + step * delta
            step *= 0.5
            if not np.linalg.norm(trial) < 1 - BALL_EDGE:
                continue
            f_trial = residual(trial)
            norm = np.linalg.norm(f_trial)
            if norm < best_norm:
                best, best_norm = (trial, f_trial), norm
            elif best is not None:
                break
    return best


def _clip(b: np.ndarray) -> np.ndarray:
    nb = np.linalg.norm(b)
    limit = 1 - BALL_EDGE
    return b if nb < limit else b * (limit / nb)


@dataclass
class ConformalFactor:
    e2rho: np.ndarray
    check: np.ndarray
    max_deviation: float
    mean_deviation: float


def conformal_factor_field(bm: BalancedMap, imm: SimplicialImmersion, md: MetricData) -> ConformalFactor:
    """Closed-form e^(2 rho) and its independent mesh check.

    The check is (1/n) sum_A |grad Phi^A|^2, i.e. tr(G^-1 G_Phi)/n with G_Phi
    the Gram matrix of the image chords, averaged from simplices to vertices
    with volume weights.
    """
    e2rho = np.exp(2 * bm.rho)
    img = bm.phi[imm.simplices]
    chords = img[:, 1:, :] - img[:, :1, :]
    g_phi = np.einsum("ska,sla->skl", chords, chords)
    per_simplex = np.einsum("skl,slk->s", md.gram_inv, g_phi) / imm.n
    acc = np.zeros(imm.num_vertices)
    vol_acc = np.zeros(imm.num_vertices)
    for k in range(imm.n + 1):
        np.add.at(acc, imm.simplices[:, k], per_simplex * md.simplex_volumes)
        np.add.at(vol_acc, imm.simplices[:, k], md.simplex_volumes)
    check = acc / vol_acc
    dev = np.abs(check - e2rho) / e2rho
    return ConformalFactor(
        e2rho=e2rho,
        check=check,
        max_deviation=float(dev.max()),
        mean_deviation=float(np.dot(md.vertex_weights, dev) / md.vol),
    )


def integrated_conformal_check(
    bm: BalancedMap, imm: SimplicialImmersion, md: MetricData, cd: CurvatureData, margin: float = 0.01
) -> dict[str, Any]:
    """Integrated pointwise conformal identity: int e^(2 rho) <= int (c + H^2).

    The Laplacian term integrates to zero on a closed manifold and the
    remaining terms are nonpositive, so only the discretization margin may
    push lhs above rhs.
    """
    if cd.source != "analytic":
        raise ValueError("integrated check needs analytic curvature")
    w = md.vertex_weights
    lhs = float(np.dot(w, np.exp(2 * bm.rho)))
    rhs = float(np.dot(w, cd.shifted))
    return {"lhs": lhs, "rhs": rhs, "gap": (rhs - lhs) / abs(rhs), "holds": lhs <= rhs * (1 + margin)}


def young_chain_check(bm: BalancedMap, md: MetricData, cd: CurvatureData, p: float, margin: float = 0.01) -> dict[str, Any]:
    """Both sides of int e^(p rho) <= int |c + H^2|^(p/2) for 2 < p <= n/2 + 1.

    Also reports the intermediate weighted integral int (c+H^2) e^((p-2) rho)
    and the pointwise Young split that bounds it.
    """
    n = bm.n
    if not (2 < p <= n / 2 + 1):
        raise ValueError(f"p = {p} outside the admissible range (2, {n / 2 + 1}] for n = {n}")
    w = md.vertex_weights
    lhs = float(np.dot(w, np.exp(p * bm.rho)))
    rhs = float(np.dot(w, np.abs(cd.shifted) ** (p / 2)))
    middle = float(np.dot(w, cd.shifted * np.exp((p - 2) * bm.rho)))
    young = (2 / p) * rhs + ((p - 2) / p) * lhs
    return {
        "lhs": lhs,
        "rhs": rhs,
        "middle": middle,
        "young": young,
        "gap": (rhs - lhs) / abs(rhs),
        "holds": lhs <= rhs * (1 + margin),
        "young_holds": middle <= young * (1 + 1e-12),
    }


def sphere_fit_residual(phi: np.ndarray, n: int) -> float:
    """Distance of the image from a round n-sphere in S^N.

    A round n-sphere in S^N is S^N cut by an affine (n+1)-plane, so the
    residual is the RMS spread of the points outside their best affine
    (n+1)-plane.
    """
    centered = phi - phi.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return float(np.sqrt(np.sum(sv[n + 1:] ** 2) / len(phi)))
