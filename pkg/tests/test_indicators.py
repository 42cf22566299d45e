import math

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchprec.errors import DenominatorNonpositiveError, NotOrthonormalError, NotThetaOrthonormalError
from sketchprec.indicators import (
    ErrorMatrixAction,
    IndicatorReport,
    certify_error_multi,
    certify_error_restricted,
    cond_bound,
    delta_estimators_lambda_xi,
    delta_galerkin_exact,
    delta_galerkin_sketched_exactTheta,
    delta_uu_exact,
    delta_uu_sketched,
    gamma_from_target,
    galerkin_quasiopt_bound,
    restricted_norm,
    sketched_dual_seminorm,
    sketched_restricted_norm,
    theta_orthonormalize,
)
from sketchprec.linalg import hs_norm, orthonormalize_u, singular_bounds
from sketchprec.operator_sketch import OperatorSketchMap, build_sketch_map
from sketchprec.sketching import SketchingMatrix, UEmbedding

from conftest import error_instance, random_metric

I = SketchingMatrix.identity


def _sqrtm(R):
    w, V = np.linalg.eigh(R)
    return V @ np.diag(np.sqrt(w)) @ V.T


def _identity_theta(M):
    return UEmbedding(I(M.s), M)


def test_error_action_matches_dense(rng):
    M, A, P, E, _ = error_instance(rng, 12, 3)
    act = ErrorMatrixAction.from_matrix(M, A, P)
    np.testing.assert_allclose(act.dense(), E, atol=1e-11)
    V = rng.standard_normal((12, 2))
    np.testing.assert_allclose(act.apply_adjoint(V), E.T @ V, atol=1e-11)
    np.testing.assert_allclose(act.rinv_apply_rinv(V), np.linalg.solve(M.R, E @ np.linalg.solve(M.R, V)), atol=1e-10)
    np.testing.assert_allclose(act.apply_B(V), M.R @ P @ A @ V, atol=1e-11)


def test_delta_uu_examples(rng):
    M, A, P, E, _ = error_instance(rng, 10, 2)
    assert delta_uu_exact(ErrorMatrixAction.from_matrix(M, A, np.linalg.inv(A)), M) <= 1e-12
    assert delta_uu_exact(ErrorMatrixAction.from_matrix(M, A, np.zeros((10, 10))), M) == pytest.approx(np.sqrt(10))
    Rih = np.linalg.inv(_sqrtm(M.R))
    assert delta_uu_exact(E, M) == pytest.approx(np.linalg.norm(Rih @ E @ Rih), rel=1e-10)


def test_delta_uu_sketched_identity_and_exact_inverse(rng):
    M, A, P, E, _ = error_instance(rng, 10, 2)
    psi = OperatorSketchMap("Psi", I(100), I(10), I(10), metric=M)
    act = ErrorMatrixAction.from_matrix(M, A, P)
    assert delta_uu_sketched(act, psi) == pytest.approx(delta_uu_exact(E, M), rel=1e-10)
    exact = ErrorMatrixAction.from_matrix(M, A, np.linalg.inv(A))
    assert delta_uu_sketched(exact, psi) <= 1e-10


def test_delta_uu_sketched_statistics(rng):
    M, A, P, E, _ = error_instance(rng, 40, 2, pert=0.2)
    act = ErrorMatrixAction.from_matrix(M, A, P)
    ref = delta_uu_exact(E, M)
    good = 0
    for s in range(200):
        psi = build_sketch_map("Psi", 0.5, 0.1, 1, metric=M, seed=s)
        est = delta_uu_sketched(act, psi)
        good += ref / math.sqrt(1.5) <= est <= ref * math.sqrt(1.5)
    assert good >= 180


def test_galerkin_exact_examples(rng):
    M, A, P, E, U_r = error_instance(rng, 9, 3)
    assert delta_galerkin_exact(np.zeros((9, 9)), U_r, M) == (0.0, 0.0)
    full = orthonormalize_u(M, rng.standard_normal((9, 9))).V
    d_uu = delta_uu_exact(E, M)
    rr, ur = delta_galerkin_exact(E, full, M)
    assert rr == pytest.approx(d_uu, rel=1e-9) and ur == pytest.approx(d_uu, rel=1e-9)
    rr, ur = delta_galerkin_exact(E, U_r, M)
    assert rr == pytest.approx(np.linalg.norm(U_r.T @ E @ U_r), rel=1e-12)
    Rih = np.linalg.inv(_sqrtm(M.R))
    assert ur == pytest.approx(np.linalg.norm(Rih @ E.T @ U_r), rel=1e-10)
    with pytest.raises(NotOrthonormalError):
        delta_galerkin_exact(E, 2 * U_r, M)


def test_galerkin_sketched_examples(rng):
    M, A, P, E, U_r = error_instance(rng, 12, 3)
    act = ErrorMatrixAction.from_matrix(M, A, P)
    theta = _identity_theta(M)
    got = delta_galerkin_sketched_exactTheta(act, U_r, theta)
    assert got == pytest.approx(delta_galerkin_exact(E, U_r, M), rel=1e-10)
    zero = ErrorMatrixAction.from_matrix(M, A, np.linalg.inv(A))
    assert max(delta_galerkin_sketched_exactTheta(zero, U_r, theta)) <= 1e-10
    th = UEmbedding(SketchingMatrix("gaussian", 8, 12, 4), M)
    Ut, _ = theta_orthonormalize(th, U_r)
    Th = th.dense()
    Rinv = np.linalg.inv(M.R)
    UT = Th @ Ut
    rr, ur = delta_galerkin_sketched_exactTheta(act, Ut, th)
    assert rr == pytest.approx(np.linalg.norm(UT.T @ Th @ Rinv @ E @ Ut), rel=1e-9)
    assert rr == pytest.approx(np.linalg.norm(np.eye(3) - UT.T @ Th @ P @ A @ Ut), rel=1e-9)
    Rih = np.linalg.inv(_sqrtm(M.R))
    assert ur == pytest.approx(np.linalg.norm(Rih @ E.T @ Rinv @ Th.T @ UT), rel=1e-9)
    with pytest.raises(NotThetaOrthonormalError):
        delta_galerkin_sketched_exactTheta(act, 2 * Ut, th)


def test_lambda_xi_estimators(rng):
    n, r = 12, 3
    M, A, P, E, U_r = error_instance(rng, n, r)
    act = ErrorMatrixAction.from_matrix(M, A, P)
    lam = OperatorSketchMap("Lambda", I(r * r), I(r), I(r))
    xi = OperatorSketchMap("Xi", I(n * r), I(n), I(r), metric=M)
    got = delta_estimators_lambda_xi(act, U_r, lam, xi)
    assert got == pytest.approx(delta_galerkin_exact(E, U_r, M), rel=1e-10)
    th = _identity_theta(M)
    got = delta_estimators_lambda_xi(act, U_r, lam, xi, sketched=True, theta=th)
    assert got == pytest.approx(delta_galerkin_sketched_exactTheta(act, U_r, th), rel=1e-10)
    zero = ErrorMatrixAction.from_matrix(M, A, np.linalg.inv(A))
    assert max(delta_estimators_lambda_xi(zero, U_r, lam, xi)) <= 1e-10


def test_lambda_xi_statistics(rng):
    n, r = 60, 4
    M, A, P, E, U_r = error_instance(rng, n, r, pert=0.3)
    act = ErrorMatrixAction.from_matrix(M, A, P)
    ref = delta_galerkin_exact(E, U_r, M)
    ok = 0
    for s in range(200):
        lam = build_sketch_map("Lambda", 0.5, 0.05, 1, shape=(r, r), seed=2 * s)
        xi = build_sketch_map("Xi", 0.5, 0.05, 1, shape=(n, r), metric=M, seed=2 * s + 1)
        est = delta_estimators_lambda_xi(act, U_r, lam, xi)
        ok += all(abs(e**2 - x**2) <= 0.5 * x**2 for e, x in zip(est, ref))
    assert ok >= 180


def test_scalar_bounds():
    assert cond_bound(0.0) == 1.0
    assert cond_bound(0.5) == pytest.approx(3.0)
    assert cond_bound(1.2) is None
    assert galerkin_quasiopt_bound(0.0, 0.0, 0.0, 1.0) == 1.0
    assert galerkin_quasiopt_bound(0.5, None, None, 1.0) == pytest.approx(2.0)
    assert galerkin_quasiopt_bound(1.5, 2.0, 1.0, 1.0) is None
    assert gamma_from_target(2.0, 1.0) == pytest.approx(1.0 / 3.0)
    with pytest.raises(DenominatorNonpositiveError):
        gamma_from_target(1.5, 1.0)
    gs = [gamma_from_target(K, 1.0) for K in (2, 5, 50, 5000)]
    assert all(a > b > 0 for a, b in zip(gs, gs[1:]))
    assert certify_error_multi(0.0, 0.7) == (0.7, 0.7)
    assert certify_error_multi(0.5, 1.0) == pytest.approx((2 / 3, 2.0))
    assert certify_error_multi(1.0, 1.0) is None
    assert certify_error_restricted(0.0, 0.0, 0.0, 0.4) == (0.4, 0.4)
    lo, hi = certify_error_restricted(0.2, 0.0, 0.5, 1.0)
    assert (lo, hi) == pytest.approx((1 / 1.2, 1 / (math.sqrt(0.75) - 0.2)))
    assert certify_error_restricted(0.9, 0.0, 0.5, 1.0) is None
    lo, hi = certify_error_restricted(0.1, 0.2, 0.3, 1.0, sketched=True, eps=0.2)
    a = 0.1 + 0.3 * 0.2
    assert (lo, hi) == pytest.approx((1 / (math.sqrt(1.2) + a), 1 / (math.sqrt(1 - 0.2 - 0.09) - a)))
    with pytest.raises(ValueError):
        cond_bound(-0.1)


def test_indicator_report():
    rep = IndicatorReport(0.3, "delta_uu", {"mu": [0.1]})
    assert rep.to_dict() == {"kind": "delta_uu", "value": 0.3, "mu": [0.1]}
    with pytest.raises(ValueError):
        IndicatorReport(-1.0, "delta_uu")
    with pytest.raises(ValueError):
        IndicatorReport(float("nan"), "delta_uu")


def test_restricted_norms_dense_oracle(rng):
    n = 10
    M = random_metric(rng, n)
    C = rng.standard_normal((n, n))
    V, W = rng.standard_normal((n, 3)), rng.standard_normal((n, 4))
    Rh = _sqrtm(M.R)
    Rih = np.linalg.inv(Rh)
    # sup_{v in V, w in W} w^T C v / (|v|_U |w|_U)
    Vo, Wo = orthonormalize_u(M, V).V, orthonormalize_u(M, W).V
    assert restricted_norm(M, C, V, W) == pytest.approx(la.svdvals(Wo.T @ C @ Vo)[0], rel=1e-10)
    assert restricted_norm(M, C) == pytest.approx(la.svdvals(Rih @ C @ Rih)[0], rel=1e-10)
    assert restricted_norm(M, C, V, W) == pytest.approx(singular_bounds(M, C, V, W).beta, rel=1e-12)
    th = _identity_theta(M)
    assert sketched_restricted_norm(M, C, th, W, V) == pytest.approx(restricted_norm(M, C, V, W), rel=1e-10)
    r = rng.standard_normal(n)
    assert sketched_dual_seminorm(M, r, th, W) == pytest.approx(np.linalg.norm(Wo.T @ r), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(6, 14), st.integers(1, 5), st.floats(0.01, 0.5), st.integers(0, 2**32 - 1))
def test_chain_and_sandwich(n, r, pert, seed):
    rng = np.random.default_rng(seed)
    M, A, P, E, U_r = error_instance(rng, n, r, pert)
    d_uu = delta_uu_exact(E, M)
    rr, ur = delta_galerkin_exact(E, U_r, M)
    tol = 1 + 1e-10
    assert rr <= ur * tol and ur <= d_uu * tol
    e_rr = restricted_norm(M, E, U_r, U_r)
    e_ur = restricted_norm(M, E, None, U_r)
    assert rr / math.sqrt(r) <= e_rr * tol and e_rr <= rr * tol
    assert ur / math.sqrt(r) <= e_ur * tol and e_ur <= ur * tol
    assert singular_bounds(M, E).beta <= hs_norm(M, E, "U->U'") * tol
