"""Conformal maps to the sphere, the Moebius flow and p-barycenter balancing."""

import math

import numpy as np
import pytest

from helpers import CORPUS, SHIFTED_ELLIPSOID, admissible_ps, mesh
from reilly_lab.conformal import (
    MoebiusParam,
    balance,
    compose,
    conformal_factor_field,
    integrated_conformal_check,
    model_to_sphere,
    moebius_apply,
    p_barycenter,
    sphere_fit_residual,
    to_sphere,
    young_chain_check,
)
from reilly_lab.curvature import analytic_mean_curvature, estimate_mean_curvature

SYMMETRIC = [("round_sphere", {}, 4), ("clifford_torus", {}, 64), ("round_S3_in_R4", {"r": 1.0}, 3)]


def random_unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_moebius(rng, dim, t=None):
    return MoebiusParam.from_pole(random_unit(rng, dim), rng.uniform(0.05, 2.0) if t is None else t)


def central(f, h=1e-5):
    return (f(h) - f(-h)) / (2 * h)


class TestModelMaps:
    def test_sphere_is_identity(self):
        imm, _ = mesh("clifford_torus", {}, 16)
        pts, rho0 = to_sphere(imm)
        np.testing.assert_array_equal(pts, imm.vertices)
        np.testing.assert_array_equal(rho0, 0.0)

    def test_euclidean_origin(self):
        pts, rho0 = model_to_sphere(np.zeros((1, 3)), 0)
        np.testing.assert_allclose(pts, [[0, 0, 0, -1]])
        assert math.exp(rho0[0]) == pytest.approx(2.0, rel=1e-15)

    def test_euclidean_pullback(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=3)
            v = random_unit(rng, 3)
            _, rho0 = model_to_sphere(x[None], 0)
            speed = central(lambda s: model_to_sphere((x + s * v)[None], 0)[0][0])
            assert np.dot(speed, speed) == pytest.approx(math.exp(2 * rho0[0]), rel=1e-6)

    def test_hyperbolic_apex(self):
        apex = np.array([[1.0, 0.0, 0.0, 0.0]])
        pts, rho0 = model_to_sphere(apex, -1)
        np.testing.assert_allclose(pts, [[0, 0, 0, -1]])
        assert rho0[0] == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_hyperbolic_pullback(self, seed):
        rng = np.random.default_rng(seed)
        # random hyperboloid point and a unit Minkowski tangent vector there
        xs = rng.normal(size=3) * 0.8
        x = np.concatenate([[math.sqrt(1 + xs @ xs)], xs])
        eta = np.diag([-1.0, 1.0, 1.0, 1.0])
        v = rng.normal(size=4)
        v = v + (x @ eta @ v) * x
        v /= math.sqrt(v @ eta @ v)
        _, rho0 = model_to_sphere(x[None], -1)
        pts = model_to_sphere(x[None], -1)[0][0]
        assert np.linalg.norm(pts) == pytest.approx(1.0, abs=1e-14)
        speed = central(lambda s: model_to_sphere((math.cosh(s) * x + math.sinh(s) * v)[None], -1)[0][0])
        assert np.dot(speed, speed) == pytest.approx(math.exp(2 * rho0[0]), rel=1e-6)

    @pytest.mark.parametrize("name,params,res", CORPUS)
    def test_images_on_unit_sphere(self, name, params, res):
        imm, _ = mesh(name, params, res)
        pts, _ = to_sphere(imm)
        assert pts.shape[1] == imm.space_form.N + 1
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)

    def test_bad_curvature(self):
        with pytest.raises(ValueError):
            model_to_sphere(np.zeros((1, 3)), 2)


class TestMoebius:
    def test_identity(self):
        rng = np.random.default_rng(1)
        pts = np.array([random_unit(rng, 4) for _ in range(30)])
        out, logf = moebius_apply(MoebiusParam.identity(4), pts)
        np.testing.assert_array_equal(out, pts)
        np.testing.assert_array_equal(logf, 0.0)
        assert MoebiusParam.from_pole(random_unit(rng, 4), 0.0).t == 0.0

    def test_flow_concentrates(self):
        rng = np.random.default_rng(2)
        a = random_unit(rng, 3)
        pts = np.array([random_unit(rng, 3) for _ in range(200)])
        # the flow is slowest next to the antipode -a
        pts = pts[np.abs(pts @ a) < 0.9]
        out, _ = moebius_apply(MoebiusParam.from_pole(a, 5.0), pts)
        assert np.max(np.linalg.norm(out - a, axis=1)) < 0.1

    def test_parameter_roundtrip(self):
        rng = np.random.default_rng(3)
        a = random_unit(rng, 4)
        m = MoebiusParam.from_pole(a, 1.7)
        assert m.t == pytest.approx(1.7, rel=1e-14)
        np.testing.assert_allclose(m.a, a, atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_composition(self, seed):
        rng = np.random.default_rng(seed)
        a = random_unit(rng, 4)
        t1, t2 = rng.uniform(0, 1.5, size=2)
        pts = np.array([random_unit(rng, 4) for _ in range(50)])
        once, f1 = moebius_apply(MoebiusParam.from_pole(a, t1), pts)
        twice, f2 = moebius_apply(MoebiusParam.from_pole(a, t2), once)
        direct, f12 = moebius_apply(MoebiusParam.from_pole(a, t1 + t2), pts)
        np.testing.assert_allclose(twice, direct, atol=1e-12)
        np.testing.assert_allclose(f1 + f2, f12, atol=1e-12)

    def test_sphericity(self):
        rng = np.random.default_rng(4)
        pts = np.array([random_unit(rng, 5) for _ in range(500)])
        for _ in range(10):
            out, _ = moebius_apply(random_moebius(rng, 5), pts)
            np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_factor_matches_jacobian(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(20):
            m = random_moebius(rng, 4)
            for _ in range(100):
                x = random_unit(rng, 4)
                v = rng.normal(size=4)
                v -= (v @ x) * x
                v /= np.linalg.norm(v)
                _, logf = moebius_apply(m, x[None])
                speed = central(lambda s: moebius_apply(m, (math.cos(s) * x + math.sin(s) * v)[None])[0][0], h=1e-6)
                worst = max(worst, abs(np.dot(speed, speed) / math.exp(2 * logf[0]) - 1))
        assert worst < 1e-6

    def test_pole_rejected(self):
        a = np.array([0.0, 0.0, 1.0])
        with pytest.raises(ValueError):
            moebius_apply(MoebiusParam.from_pole(a, 0.5), a[None])
        out, _ = moebius_apply(MoebiusParam.identity(3), a[None])
        np.testing.assert_array_equal(out[0], a)

    def test_parameter_errors(self):
        with pytest.raises(ValueError):
            MoebiusParam(np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            MoebiusParam.from_pole(np.array([2.0, 0.0, 0.0]), 1.0)
        with pytest.raises(ValueError):
            MoebiusParam.from_pole(np.array([1.0, 0.0, 0.0]), -0.1)


class TestBalance:
    @pytest.mark.parametrize("name,params,res", SYMMETRIC)
    @pytest.mark.parametrize("p", [1.5, 2.0, 2.5])
    def test_symmetric_accepts_identity(self, name, params, res, p):
        imm, md = mesh(name, params, res)
        bm = balance(imm, md, p)
        assert bm.converged and bm.iterations == 0
        np.testing.assert_array_equal(bm.moebius.b, 0.0)
        assert bm.residual_norm < 1e-10

    @pytest.mark.parametrize("p", [1.5, 2.0])
    def test_shifted_ellipsoid(self, p):
        imm, md = mesh("ellipsoid", SHIFTED_ELLIPSOID, 4)
        bm = balance(imm, md, p)
        assert bm.converged
        assert bm.iterations <= 100
        assert bm.residual_norm < 1e-8 * md.vol
        assert np.linalg.norm(bm.moebius.b) > 0.05
        assert np.all(np.diff(bm.history) < 0)
        if p == 2:
            # the ordinary barycenter of the image vanishes
            assert np.linalg.norm(md.vertex_weights @ bm.phi) < 1e-8 * md.vol

    def test_residual_recompute(self):
        imm, md = mesh("ellipsoid", SHIFTED_ELLIPSOID, 3)
        bm = balance(imm, md, 1.5)
        fresh = compose(imm, md, 1.5, bm.moebius)
        np.testing.assert_allclose(p_barycenter(bm.phi, md.vertex_weights, 1.5), bm.residual, rtol=0, atol=1e-14)
        np.testing.assert_allclose(fresh.residual, bm.residual, rtol=0, atol=1e-14)

    @pytest.mark.parametrize("name,params,res", CORPUS)
    def test_corpus_converges(self, name, params, res):
        imm, md = mesh(name, params, res)
        for p in admissible_ps(imm.n):
            bm = balance(imm, md, p)
            assert bm.converged, (p, bm.residual_norm)
            assert bm.residual_norm <= 1e-8 * md.vol
            np.testing.assert_allclose(np.linalg.norm(bm.phi, axis=1), 1.0, atol=1e-12)
            assert np.all(np.exp(2 * bm.rho) > 0)

    def test_non_convergence_reported(self):
        imm, md = mesh("ellipsoid", SHIFTED_ELLIPSOID, 3)
        bm = balance(imm, md, 1.5, max_newton=1)
        assert not bm.converged
        assert bm.iterations == 1
        assert bm.residual_norm < bm.history[0]

    def test_base_tags(self):
        tags = {name: balance(*mesh(name, params, res), 2.0).base_map_tag for name, params, res in CORPUS}
        assert tags["round_sphere"] == "inverse_stereographic"
        assert tags["clifford_torus"] == "identity"
        assert tags["geodesic_sphere_H3"] == "hyperboloid_ball_stereographic"

    def test_bad_exponent(self):
        imm, md = mesh("round_sphere", {}, 1)
        with pytest.raises(ValueError):
            balance(imm, md, 1.0)


class TestConformalFactor:
    def test_identity_map(self):
        imm, md = mesh("clifford_torus", {}, 64)
        cf = conformal_factor_field(compose(imm, md, 2.0), imm, md)
        np.testing.assert_array_equal(cf.e2rho, 1.0)
        assert cf.max_deviation < 1e-10

    def factor_deviation(self, level):
        imm, md = mesh("round_sphere", {}, level)
        m = MoebiusParam.from_pole(random_unit(np.random.default_rng(7), 4), 0.3)
        return conformal_factor_field(compose(imm, md, 2.0, m), imm, md)

    def test_random_moebius_level4(self):
        assert self.factor_deviation(4).max_deviation < 0.02

    def test_refinement(self):
        l4, l5 = self.factor_deviation(4), self.factor_deviation(5)
        assert l5.max_deviation < l4.max_deviation
        assert l5.mean_deviation < l4.mean_deviation

    @pytest.mark.parametrize("name,params,res", [c for c in CORPUS if c[0] != "round_S3_in_R4"])
    def test_balanced_corpus(self, name, params, res):
        imm, md = mesh(name, params, res)
        cf = conformal_factor_field(balance(imm, md, 2.0), imm, md)
        assert cf.mean_deviation < 0.02


class TestIntegratedChecks:
    def test_sphere_equality(self):
        imm, md = mesh("round_sphere", {}, 4)
        out = integrated_conformal_check(balance(imm, md, 2.0), imm, md, analytic_mean_curvature(imm))
        assert out["lhs"] == pytest.approx(md.vol, rel=1e-12)
        assert out["rhs"] == pytest.approx(md.vol, rel=1e-12)
        assert md.vol == pytest.approx(4 * math.pi, rel=0.01)
        assert out["holds"]

    def test_hyperbolic_sphere(self):
        imm, md = mesh("geodesic_sphere_H3", {"r": 1.0}, 4)
        out = integrated_conformal_check(balance(imm, md, 2.0), imm, md, analytic_mean_curvature(imm))
        assert out["rhs"] == pytest.approx(md.vol / math.sinh(1.0) ** 2, rel=1e-12)
        assert out["holds"]

    def test_ellipsoid_strict(self):
        imm, md = mesh("ellipsoid", SHIFTED_ELLIPSOID, 4)
        out = integrated_conformal_check(balance(imm, md, 2.0), imm, md, analytic_mean_curvature(imm))
        assert out["lhs"] < out["rhs"]
        assert out["gap"] > 0.01

    @pytest.mark.parametrize("name,params,res", CORPUS)
    def test_corpus(self, name, params, res):
        imm, md = mesh(name, params, res)
        cd = analytic_mean_curvature(imm)
        for p in admissible_ps(imm.n):
            assert integrated_conformal_check(balance(imm, md, p), imm, md, cd)["holds"]

    def test_needs_analytic_curvature(self):
        imm, md = mesh("round_sphere", {}, 3)
        with pytest.raises(ValueError):
            integrated_conformal_check(balance(imm, md, 2.0), imm, md, estimate_mean_curvature(imm, md))


class TestYoungChain:
    def test_round_s3_boundary(self):
        imm, md = mesh("round_S3_in_R4", {"r": 1.0}, 3)
        cd = analytic_mean_curvature(imm)
        out = young_chain_check(compose(imm, md, 2.5), md, cd, 2.5)
        assert out["rhs"] == pytest.approx(md.vol, rel=1e-12)
        assert md.vol == pytest.approx(2 * math.pi**2, rel=0.03)
        assert out["holds"] and out["young_holds"]

    def test_range(self):
        imm, md = mesh("round_S3_in_R4", {"r": 1.0}, 2)
        cd = analytic_mean_curvature(imm)
        bm = compose(imm, md, 2.5)
        with pytest.raises(ValueError):
            young_chain_check(bm, md, cd, 2.51)
        with pytest.raises(ValueError):
            young_chain_check(bm, md, cd, 2.0)
        surf, smd = mesh("round_sphere", {}, 2)
        with pytest.raises(ValueError):
            young_chain_check(compose(surf, smd, 2.5), smd, analytic_mean_curvature(surf), 2.5)


class TestUmbilicImage:
    @pytest.mark.parametrize(
        "name,params,res",
        [c for c in CORPUS if c[0] in ("round_sphere", "geodesic_sphere_S3", "geodesic_sphere_H3", "round_S3_in_R4")],
    )
    def test_geodesic_spheres_stay_round(self, name, params, res):
        imm, md = mesh(name, params, res)
        for p in (1.5, 2.0):
            assert sphere_fit_residual(balance(imm, md, p).phi, imm.n) < 1e-10

    def test_clifford_is_not_round(self):
        imm, md = mesh("clifford_torus", {}, 32)
        assert sphere_fit_residual(balance(imm, md, 2.0).phi, 2) > 0.1

    def test_ellipsoid_is_not_round(self):
        imm, md = mesh("ellipsoid", SHIFTED_ELLIPSOID, 3)
        assert sphere_fit_residual(balance(imm, md, 2.0).phi, 2) > 1e-3
