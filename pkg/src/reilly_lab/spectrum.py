"""First nonzero eigenvalue of the p-Laplacian on a simplicial immersion.

Discretization: piecewise-linear fields, exact per-simplex gradients for
the energy ``sum vol * |grad u|^p`` and lumped vertex quadrature for every
``|u|^p``-type integral.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import MetricData, SimplicialImmersion

logger = logging.getLogger(__name__)

GRAD_FLOOR = 1e-12
CENTER_RTOL = 1e-12
EXPAND_MAX = 6


@dataclass
class SpectralResult:
    p: float
    lam: float
    eigenfunction: np.ndarray
    iterations: int
    restarts_used: int
    final_gradient_norm: float
    restart_values: list[float] = field(default_factory=list)
    converged: bool = True
    method: str = "rayleigh"
    extra: dict[str, Any] = field(default_factory=dict)


def signed_power(t: np.ndarray, q: float) -> np.ndarray:
    """sign(t)|t|^q, continuous at 0 for q > 0."""
    return np.sign(t) * np.abs(t) ** q


def _check_field(u: np.ndarray, md: MetricData) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != md.vertex_weights.shape:
        raise ValueError(f"field has shape {u.shape}, mesh has {md.vertex_weights.shape[0]} vertices")
    if not np.all(np.isfinite(u)):
        raise ValueError("field has non-finite values")
    return u


def centering_residual(u: np.ndarray, md: MetricData, p: float) -> float:
    """|int |u|^(p-2) u| / int |u|^(p-1); zero for a p-mean-centered field."""
    w = md.vertex_weights
    num = abs(float(np.dot(w, signed_power(u, p - 1))))
    den = float(np.dot(w, np.abs(u) ** (p - 1)))
    return num / den if den > 0 else np.inf


def p_mean_center(u: np.ndarray, md: MetricData, p: float) -> tuple[np.ndarray, float]:
    """Shift ``u`` so that the lumped integral of |u|^(p-2) u vanishes.

    The defect G(s) = sum w |u-s|^(p-2)(u-s) is strictly decreasing in s, so
    the shift is unique. Bisection on [min u, max u] brackets it; a few
    safeguarded Newton steps finish it off.
    """
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    u = _check_field(u, md)
    w = md.vertex_weights
    lo, hi = float(u.min()), float(u.max())
    if hi - lo <= 1e-14 * max(1.0, abs(hi)):
        raise ValueError("cannot center a constant field")
    if p == 2:
        s = float(np.dot(w, u) / np.sum(w))
        # one correction pass for rounding
        s += float(np.dot(w, u - s) / np.sum(w))
        return u - s, s

    def defect(s: float) -> tuple[float, float]:
        t = u - s
        return float(np.dot(w, signed_power(t, p - 1))), float(np.dot(w, np.abs(t) ** (p - 1)))

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g, scale = defect(mid)
        if abs(g) <= CENTER_RTOL * scale:
            lo = hi = mid
            break
        if g > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1e-300):
            break
    s = 0.5 * (lo + hi)
    for _ in range(4):
        g, scale = defect(s)
        if abs(g) <= 1e-2 * CENTER_RTOL * scale:
            break
        t = u - s
        dg = -(p - 1) * float(np.dot(w, np.maximum(np.abs(t), GRAD_FLOOR) ** (p - 2)))
        step = s - g / dg
        if not (min(lo, hi) - 1e-15 <= step <= max(lo, hi) + 1e-15) or not np.isfinite(step):
            break
        s = step
    return u - s, s


class PLaplacian:
    """Energy, mass and gradients of the discrete Rayleigh quotient."""

    def __init__(self, imm: SimplicialImmersion, md: MetricData):
        self.imm = imm
        self.md = md
        self.simplices = imm.simplices
        self.gram_inv = md.gram_inv
        self.vol = md.simplex_volumes
        self.w = md.vertex_weights
        self._stiffness: sp.csr_matrix | None = None
        self._solver = None

    def edge_differences(self, u: np.ndarray) -> np.ndarray:
        vals = u[self.simplices]
        return vals[:, 1:] - vals[:, :1]

    def grad_sq(self, u: np.ndarray) -> np.ndarray:
        """|grad u|^2 on every simplex."""
        d = self.edge_differences(u)
        return np.einsum("sk,skl,sl->s", d, self.gram_inv, d)

    def energy(self, u: np.ndarray, p: float) -> float:
        return float(np.dot(self.vol, np.maximum(self.grad_sq(u), 0.0) ** (p / 2)))

    def mass(self, u: np.ndarray, p: float) -> float:
        return float(np.dot(self.w, np.abs(u) ** p))

    def rayleigh(self, u: np.ndarray, p: float) -> float:
        den = self.mass(u, p)
        if den <= 0:
            raise ValueError("Rayleigh quotient of the zero field")
        return self.energy(u, p) / den

    def energy_grad(self, u: np.ndarray, p: float) -> np.ndarray:
        d = self.edge_differences(u)
        gd = np.einsum("skl,sl->sk", self.gram_inv, d)
        g2 = np.maximum(np.einsum("sk,sk->s", d, gd), 0.0)
        coef = p * self.vol * (g2 + GRAD_FLOOR) ** (p / 2 - 1)
        local = coef[:, None] * gd
        out = np.zeros(len(u))
        for k in range(1, self.imm.n + 1):
            np.add.at(out, self.simplices[:, k], local[:, k - 1])
        np.add.at(out, self.simplices[:, 0], -local.sum(axis=1))
        return out

    def mass_grad(self, u: np.ndarray, p: float) -> np.ndarray:
        return p * self.w * signed_power(u, p - 1)

    def rayleigh_and_grad(self, u: np.ndarray, p: float) -> tuple[float, np.ndarray]:
        num = self.energy(u, p)
        den = self.mass(u, p)
        r = num / den
        return r, (self.energy_grad(u, p) - r * self.mass_grad(u, p)) / den

    def weighted_stiffness(self, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """P1 stiffness sum vol * weight * D^T G^-1 D."""
        n = self.imm.n
        D = np.hstack([-np.ones((n, 1)), np.eye(n)])
        scale = self.vol if weights is None else self.vol * weights
        local = scale[:, None, None] * np.einsum("ka,skl,lb->sab", D, self.gram_inv, D)
        rows = np.repeat(self.simplices, n + 1, axis=1)
        cols = np.tile(self.simplices, (1, n + 1))
        V = self.imm.num_vertices
        K = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(V, V)).tocsr()
        return ((K + K.T) * 0.5).tocsr()

    @property
    def stiffness(self) -> sp.csr_matrix:
        if self._stiffness is None:
            self._stiffness = self.weighted_stiffness()
        return self._stiffness

    @property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.w)

    @property
    def shift(self) -> float:
        K = self.stiffness
        return 1e-8 * float(K.diagonal().sum() / self.w.sum())

    def solve_shifted(self, rhs: np.ndarray) -> np.ndarray:
        """Apply (K + s M)^-1 with a small positive shift s."""
        if self._solver is None:
            A = (self.stiffness + self.shift * self.mass_matrix).tocsc()
            self._solver = _factor(A)
        return self._solver(rhs)

    def p_preconditioner(self, u: np.ndarray, p: float):
        """Factor the stiffness weighted by |grad u|^(p-2) (floored, shifted).

        With this operator a unit preconditioned step is one nonlinear
        inverse-power update; p = 2 reduces to the plain Laplacian.
        """
        if p == 2:
            return self.solve_shifted
        g2 = self.grad_sq(u)
        floor = 1e-6 * float(np.dot(self.vol, g2) / self.vol.sum())
        weights = (g2 + floor) ** (p / 2 - 1)
        A = self.weighted_stiffness(weights)
        shift = 1e-8 * float(A.diagonal().sum() / self.w.sum())
        return _factor(A + shift * self.mass_matrix)

def _factor(A: sp.spmatrix):
    # symmetric ordering keeps fill-in low on tetrahedral meshes
    return splu(
        A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
    ).solve


def rayleigh_quotient(u: np.ndarray, imm: SimplicialImmersion, md: MetricData, p: float) -> float:
    u = _check_field(u, md)
    return PLaplacian(imm, md).rayleigh(u, p)


def _normalize(u: np.ndarray, w: np.ndarray, p: float) -> np.ndarray:
    return u / float(np.dot(w, np.abs(u) ** p)) ** (1.0 / p)


def _project(u: np.ndarray, md: MetricData, p: float) -> np.ndarray:
    centered, _ = p_mean_center(u, md, p)
    return _normalize(centered, md.vertex_weights, p)


def _constrained_grad_norm(op: PLaplacian, u: np.ndarray, g: np.ndarray, p: float, r: float) -> float:
    normal = op.w * np.maximum(np.abs(u), GRAD_FLOOR) ** (p - 2)
    gc = g - (np.dot(g, normal) / np.dot(normal, normal)) * normal
    return float(np.sqrt(np.sum(gc**2 / op.w))) / max(r, 1e-300)


def _descend(
    op: PLaplacian, u0: np.ndarray, p: float, max_iter: int, tol: float, refresh: int = 5
) -> dict[str, Any]:
    """Preconditioned projected gradient descent with Armijo backtracking.

    For p = 2 the quotient is a ratio of quadratics, so the line search is
    replaced by the exact minimizer over span{u, direction, previous step},
    which keeps clustered eigenvalues from stalling the iteration. For other
    p the preconditioned direction carries Polak-Ribiere+ momentum. Each
    trial point is re-centered and re-normalized before the Armijo test, so
    accepted iterates are admissible and the Rayleigh value never rises.
    Stops once the constrained gradient norm drops below ``tol`` or the
    relative decrease stays below ``tol`` for two consecutive steps.
    """
    md = op.md
    u = _project(u0, md, p)
    r, g = op.rayleigh_and_grad(u, p)
    history = [r]
    converged = False
    stalls = 0
    gnorm = _constrained_grad_norm(op, u, g, p, r)
    it = 0
    precond = None
    previous = None
    last = None
    for it in range(1, max_iter + 1):
        if gnorm < tol:
            converged = True
            break
        if precond is None or (it - 1) % refresh == 0:
            precond = op.p_preconditioner(u, p)
        pg = precond(g) / p
        direction = -pg
        if p != 2 and last is not None:
            # Polak-Ribiere+ momentum on the preconditioned gradient
            g_old, pg_old, d_old = last
            beta = max(0.0, float(np.dot(g - g_old, pg)) / float(np.dot(g_old, pg_old)))
            direction = direction + beta * d_old
        slope = float(np.dot(g, direction))
        if slope >= 0:
            direction = -pg
            slope = float(np.dot(g, direction))
        if slope >= 0:
            direction, slope = -g, -float(np.dot(g, g))
        last = (g, pg, direction)
        if p == 2:
            trial, r_trial = _ritz_step(op, u, direction, previous)
            accepted = r_trial <= r
        else:
            step = 1.0
            accepted = False
            for _ in range(40):
                trial = _project(u + step * direction, md, p)
                r_trial = op.rayleigh(trial, p)
                if r_trial <= r + 1e-4 * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if accepted and step == 1.0:
                # full step accepted: keep doubling while the value still drops
                for _ in range(EXPAND_MAX):
                    bigger = _project(u + 2 * step * direction, md, p)
                    r_bigger = op.rayleigh(bigger, p)
                    if r_bigger >= r_trial:
                        break
                    step, trial, r_trial = 2 * step, bigger, r_bigger
        if not accepted:
            # no Armijo step at floating-point resolution: stationary
            converged = True
            break
        decrease = (r - r_trial) / abs(r_trial)
        previous = trial - u
        u = trial
        r, g = op.rayleigh_and_grad(u, p)
        history.append(r)
        gnorm = _constrained_grad_norm(op, u, g, p, r)
        stalls = stalls + 1 if decrease < tol else 0
        if stalls >= 2:
            converged = True
            break
    return {"u": u, "lam": r, "iterations": it, "gnorm": gnorm, "converged": converged, "history": history}


def _ritz_step(
    op: PLaplacian, u: np.ndarray, direction: np.ndarray, previous: np.ndarray | None
) -> tuple[np.ndarray, float]:
    """Minimize the p = 2 quotient over a small centered subspace containing u."""
    w = op.md.vertex_weights
    cols = [u, direction] if previous is None else [u, direction, previous]
    Z = np.stack(cols, axis=1)
    Z = Z - (w @ Z) / w.sum()
    mz = Z.T @ (w[:, None] * Z)
    evals, evecs = np.linalg.eigh(mz)
    keep = evals > 1e-12 * evals.max()
    basis = Z @ (evecs[:, keep] / np.sqrt(evals[keep]))
    kz = basis.T @ (op.stiffness @ basis)
    _, y = np.linalg.eigh((kz + kz.T) / 2)
    trial = basis @ y[:, 0]
    if np.dot(w * trial, u) < 0:
        trial = -trial
    trial = _project(trial, op.md, 2.0)
    return trial, op.rayleigh(trial, 2.0)


def _seed_fields(imm: SimplicialImmersion, restarts: int, seed: int) -> list[np.ndarray]:
    fields = []
    for j in range(imm.vertices.shape[1]):
        col = imm.vertices[:, j]
        if np.ptp(col) > 1e-9 * max(1.0, np.abs(col).max()):
            fields.append(col.copy())
    fields = fields[:restarts]
    rng = np.random.default_rng(seed)
    while len(fields) < restarts:
        fields.append(rng.standard_normal(imm.num_vertices))
    return fields


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("REILLY_LAB_THREADS", "1")))
    except ValueError:
        return 1


def minimize_rayleigh(
    imm: SimplicialImmersion,
    md: MetricData,
    p: float,
    restarts: int = 6,
    max_iter: int = 1000,
    tol: float = 1e-8,
    seed: int = 0,
) -> SpectralResult:
    """Upper estimate of the first nonzero p-Laplacian eigenvalue.

    Starts from the centered ambient coordinate functions, then from
    seeded random fields, and keeps the smallest Rayleigh value (ties go to
    the lowest restart index). Non-convergence is flagged, not raised.
    """
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if restarts < 1:
        raise ValueError("need at least one restart")
    op = PLaplacian(imm, md)
    op.solve_shifted(np.zeros(imm.num_vertices))  # factor once before threading
    seeds = _seed_fields(imm, restarts, seed)
    workers = min(_threads(), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda u0: _descend(op, u0, p, max_iter, tol), seeds))
    else:
        runs = [_descend(op, u0, p, max_iter, tol) for u0 in seeds]

    values = [run["lam"] for run in runs]
    best = 0
    for i, v in enumerate(values):
        if v < values[best] * (1 - 1e-12):
            best = i
    run = runs[best]
    u = run["u"]
    lam = op.rayleigh(u, p)
    if not run["converged"]:
        logger.warning("p=%g: best restart did not converge (gradient norm %.3e)", p, run["gnorm"])
    return SpectralResult(
        p=p,
        lam=lam,
        eigenfunction=u,
        iterations=run["iterations"],
        restarts_used=len(runs),
        final_gradient_norm=run["gnorm"],
        restart_values=values,
        converged=bool(run["converged"]),
        method="rayleigh",
        extra={"best_restart": best, "history": run["history"]},
    )


def linear_eigensolve(
    imm: SimplicialImmersion,
    md: MetricData,
    block: int = 12,
    tol: float = 1e-10,
    max_iter: int = 500,
    seed: int = 0,
    cluster_rtol: float = 1e-3,
) -> SpectralResult:
    """Smallest nonzero eigenvalue of K v = lambda M v (lumped M).

    Block shifted inverse iteration with Rayleigh-Ritz, constants deflated
    in the M inner product. Reports the full Ritz spectrum of the block and
    the multiplicity of the lowest cluster.
    """
    op = PLaplacian(imm, md)
    K, w = op.stiffness, op.w
    V = imm.num_vertices
    block = min(block, V - 1)
    X = np.column_stack(_seed_fields(imm, block, seed))

    def deflate(Y: np.ndarray) -> np.ndarray:
        return Y - np.outer(np.ones(V), w @ Y / w.sum())

    X = deflate(X)
    theta = np.full(block, np.inf)
    resid = np.full(block, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        Y = deflate(op.solve_shifted(w[:, None] * X))
        # M-orthonormalize before Rayleigh-Ritz
        q, _ = np.linalg.qr(np.sqrt(w)[:, None] * Y)
        Y = q / np.sqrt(w)[:, None]
        A = Y.T @ (K @ Y)
        A = 0.5 * (A + A.T)
        theta, C = np.linalg.eigh(A)
        X = Y @ C
        R = K @ X - (w[:, None] * X) * theta
        resid = np.sqrt(np.sum(R**2 / w[:, None], axis=0)) / np.maximum(np.abs(theta), 1e-300)
        # only the lowest cluster has to converge; a cluster cut by the block edge never settles
        want = max(1, int(np.sum(theta <= theta[0] * (1 + 10 * cluster_rtol))))
        if want < block and np.all(resid[:want] < tol):
            break
    else:
        raise RuntimeError(f"inverse iteration did not converge (residual {resid[:want].max():.3e})")
    if theta[0] <= 0:
        raise RuntimeError("inverse iteration broke down: nonpositive Ritz value")
    lam = float(theta[0])
    u = _normalize(X[:, 0], w, 2.0)
    multiplicity = int(np.sum(np.abs(theta - lam) <= cluster_rtol * lam))
    return SpectralResult(
        p=2.0,
        lam=lam,
        eigenfunction=u,
        iterations=it,
        restarts_used=1,
        final_gradient_norm=float(resid[0]),
        restart_values=[lam],
        converged=True,
        method="inverse_iteration",
        extra={"ritz_values": theta.tolist(), "multiplicity": multiplicity},
    )


def certify_upper_bound(u: np.ndarray, imm: SimplicialImmersion, md: MetricData, p: float, rtol: float = 1e-8) -> float:
    """Rayleigh quotient of an admissible test field.

    Any p-mean-centered field bounds the discrete infimum from above, so the
    returned value certifies lambda_1,p <= R_p(u).
    """
    u = _check_field(u, md)
    res = centering_residual(u, md, p)
    if res > rtol:
        raise ValueError(f"test field is not p-mean centered (residual {res:.3e} > {rtol:.1e})")
    return rayleigh_quotient(u, imm, md, p)
