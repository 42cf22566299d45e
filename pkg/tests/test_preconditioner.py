import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchprec.affine import AffineOperator, Constant, ParameterGrid, Power
from sketchprec.errors import DimensionError, SingularError
from sketchprec.indicators import ErrorMatrixAction, delta_galerkin_exact, delta_galerkin_sketched_exactTheta, delta_uu_exact
from sketchprec.linalg import metric_factorize, orthonormalize_u
from sketchprec.operator_sketch import OperatorSketchMap, apply_psi
from sketchprec.preconditioner import (
    PHI_SEED_MASK,
    IndicatorSystem,
    apply_preconditioner,
    assemble_system,
    build_basis,
    build_objective_maps,
    compress_online,
    greedy_select,
    load_system,
    lstsq_qr,
    online_sketch,
    save_system,
    solve_coefficients,
)
from sketchprec.sketching import SketchingMatrix, UEmbedding, gaussian_min_rows
from sketchprec.indicators import theta_orthonormalize

from conftest import random_affine, random_metric, random_rhs

I = SketchingMatrix.identity


def identity_maps(M, r):
    n = M.n
    return {
        "psi": OperatorSketchMap("Psi", I(n * n), I(n), I(n), metric=M),
        "lambda": OperatorSketchMap("Lambda", I(r * r), I(r), I(r)),
        "xi": OperatorSketchMap("Xi", I(n * r), I(n), I(r), metric=M),
    }


def setup(rng, n=10, r=3, m_A=3):
    op = random_affine(rng, n, m_A)
    M = random_metric(rng, n)
    U_r = orthonormalize_u(M, rng.standard_normal((n, r))).V
    return op, M, U_r


def test_build_basis_examples(rng):
    op = AffineOperator([sp.identity(4, format="csr")], [Constant()])
    b = build_basis(op, [np.zeros(1)])
    v = rng.standard_normal(4)
    np.testing.assert_allclose(b.action([1.0]).apply(v), v)
    b = build_basis(op, [np.zeros(1), np.zeros(1)])
    assert b.p == 2
    op, M, _ = setup(rng)
    pts = [rng.random(2) for _ in range(3)]
    b = build_basis(op, pts)
    w = rng.standard_normal(10)
    for mu, Y in zip(pts, b.factors):
        assert np.linalg.norm(Y.solve(op.assemble(mu) @ w) - w) <= 1e-8 * np.linalg.norm(w)
    sing = AffineOperator([sp.csr_matrix((3, 3)), sp.identity(3, format="csr")], [Constant(), Power(0)])
    b = build_basis(sing, [np.zeros(1), np.ones(1)])
    assert b.p == 1 and len(b.rejected) == 1
    with pytest.raises(SingularError):
        build_basis(sing, [np.zeros(1)])


def test_apply_preconditioner(rng):
    op, M, _ = setup(rng)
    pts = [rng.random(2) for _ in range(3)]
    b = build_basis(op, pts)
    v = rng.standard_normal(10)
    assert not apply_preconditioner(b.action(np.zeros(3)), v).any()
    lam = rng.standard_normal(3)
    dense = sum(l * np.linalg.inv(op.assemble(mu).toarray()) for l, mu in zip(lam, pts))
    np.testing.assert_allclose(apply_preconditioner(b.action(lam), v), dense @ v, atol=1e-10)
    np.testing.assert_allclose(b.action(lam).apply_adjoint(v), dense.T @ v, atol=1e-10)
    with pytest.raises(DimensionError):
        b.action(np.ones(2))


def test_lstsq_examples(rng):
    h = rng.standard_normal(6)
    lam, res = lstsq_qr(h[:, None], h)
    assert lam == pytest.approx([1.0]) and res <= 1e-14
    W = np.zeros((4, 1)); W[0, 0] = 1.0
    lam, res = lstsq_qr(W, np.array([0.0, 1.0, 0.0, 0.0]))
    assert lam == pytest.approx([0.0]) and res == pytest.approx(1.0)
    W = rng.standard_normal((12, 4)); h = rng.standard_normal(12)
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    ref = Vt.T @ ((U.T @ h) / s)
    lam, res = lstsq_qr(W, h)
    np.testing.assert_allclose(lam, ref, atol=1e-10)
    assert res == pytest.approx(np.linalg.norm(W @ ref - h), rel=1e-10)
    Wd = np.hstack([W[:, :2], W[:, :1]])
    lam, res = lstsq_qr(Wd, h)
    np.testing.assert_allclose(lam, np.linalg.pinv(Wd) @ h, atol=1e-10)
    assert lstsq_qr(np.zeros((3, 2)), h[:3])[0].tolist() == [0.0, 0.0]
    with pytest.raises(DimensionError):
        lstsq_qr(np.ones((2, 3)), np.ones(2))


def test_interpolation_point_exact(rng):
    op, M, U_r = setup(rng)
    mu = np.array([0.3, 0.6])
    b = build_basis(op, [mu])
    for obj in ("multi", "galerkin_rr", "galerkin_ur", "galerkin"):
        sys = assemble_system(b, op, M, obj, identity_maps(M, 3), U_r=U_r, gamma=0.5)
        lam, res = solve_coefficients(sys, mu)
        assert res <= 1e-8 and lam == pytest.approx([1.0], abs=1e-8)


def test_single_term_system_constant(rng):
    op = AffineOperator([random_affine(rng, 8, 1).matrices[0]], [Constant()])
    M = random_metric(rng, 8)
    b = build_basis(op, [np.zeros(1), np.ones(1)])
    sys = assemble_system(b, op, M, "multi", identity_maps(M, 2))
    np.testing.assert_array_equal(sys.evaluate([0.1])[0], sys.evaluate([0.9])[0])


@pytest.mark.parametrize("objective", ["multi", "galerkin_rr", "galerkin_ur", "sketched_rr", "sketched_ur"])
def test_identity_system_equals_exact_indicator(rng, objective):
    op, M, U_r = setup(rng)
    theta = UEmbedding(SketchingMatrix("gaussian", 9, 10, 3), M)
    Ut, _ = theta_orthonormalize(theta, U_r)
    basis_u = Ut if objective.startswith("sketched") else U_r
    b = build_basis(op, [rng.random(2) for _ in range(3)])
    sys = assemble_system(b, op, M, objective, identity_maps(M, 3), U_r=basis_u, theta=theta)
    mu = rng.random(2)
    A = op.assemble(mu).toarray()
    W, h = sys.evaluate(mu)
    for _ in range(4):
        lam = rng.standard_normal(3)
        act = ErrorMatrixAction.from_matrix(M, A, b.action(lam).dense())
        if objective == "multi":
            ref = delta_uu_exact(act, M)
        elif objective.startswith("galerkin"):
            ref = delta_galerkin_exact(act.dense(), U_r, M)[objective.endswith("ur")]
        else:
            ref = delta_galerkin_sketched_exactTheta(act, Ut, theta)[objective.endswith("ur")]
        assert np.linalg.norm(W @ lam - h) == pytest.approx(ref, rel=1e-9)


def test_combined_objective_weighting(rng):
    op, M, U_r = setup(rng)
    b = build_basis(op, [rng.random(2) for _ in range(2)])
    maps = identity_maps(M, 3)
    g = 0.7
    comb = assemble_system(b, op, M, "galerkin", maps, U_r=U_r, gamma=g)
    rr = assemble_system(b, op, M, "galerkin_rr", maps, U_r=U_r)
    ur = assemble_system(b, op, M, "galerkin_ur", maps, U_r=U_r)
    mu, lam = rng.random(2), rng.standard_normal(2)
    res = lambda s: np.linalg.norm(s.evaluate(mu)[0] @ lam - s.evaluate(mu)[1])
    assert res(comb) ** 2 == pytest.approx(g * res(ur) ** 2 + res(rr) ** 2, rel=1e-10)
    with pytest.raises(ValueError):
        assemble_system(b, op, M, "galerkin", maps, U_r=U_r)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_affine_consistency(seed):
    rng = np.random.default_rng(seed)
    op, M, U_r = setup(rng, n=8)
    maps = {"psi": OperatorSketchMap("Psi", SketchingMatrix("gaussian", 11, 20, 1), SketchingMatrix("gaussian", 5, 8, 2),
                                     SketchingMatrix("psrht", 4, 8, 3), metric=M)}
    b = build_basis(op, [rng.random(2) for _ in range(2)])
    sys = assemble_system(b, op, M, "multi", maps)
    mu = rng.random(2)
    W, _ = sys.evaluate(mu)
    A = op.assemble(mu)
    direct = np.column_stack([apply_psi(maps["psi"], lambda Z, Y=Y: Y.solve(A @ M.solve(Z))) for Y in b.factors])
    np.testing.assert_allclose(W, direct, atol=1e-10 * max(1.0, np.abs(direct).max()))


def test_residual_monotone_under_growth(rng):
    op, M, U_r = setup(rng)
    b = build_basis(op, [rng.random(2) for _ in range(4)])
    sys = assemble_system(b, op, M, "galerkin", identity_maps(M, 3), U_r=U_r, gamma=0.3)
    for mu in rng.random((15, 2)):
        res = [solve_coefficients(sys.truncate(p), mu)[1] for p in range(1, 5)]
        assert all(b <= a * (1 + 1e-10) for a, b in zip(res, res[1:]))


def test_compress_online(rng):
    op, M, U_r = setup(rng)
    b = build_basis(op, [rng.random(2) for _ in range(2)])
    sys = assemble_system(b, op, M, "multi", identity_maps(M, 3))
    same = compress_online(sys, I(sys.k))
    np.testing.assert_array_equal(same.terms, sys.terms)
    zero = IndicatorSystem("multi", np.zeros((50, 2, 3)), np.zeros(50), op.coefficients)
    assert not compress_online(zero, SketchingMatrix("gaussian", 10, 50, 1)).terms.any()
    with pytest.raises(DimensionError):
        compress_online(sys, I(sys.k + 1))
    phi = online_sketch(sys, 50, 0.1, seed=3)
    assert phi.is_identity  # k = 100 is below the calculator size
    big = IndicatorSystem("multi", rng.standard_normal((5000, 2, 3)), rng.standard_normal(5000), op.coefficients)
    phi = online_sketch(big, 50, 0.1, seed=3)
    assert phi.k == gaussian_min_rows(0.5, 0.1 / 50, 3) and phi.seed == 3 ^ PHI_SEED_MASK


def test_objective_maps_union_bound(rng):
    M = random_metric(rng, 30)
    maps = build_objective_maps("galerkin", M, 0.5, 0.1, 40, 3, r=4, seed=1)
    assert set(maps) == {"lambda", "xi"}
    for m in maps.values():
        assert m.delta == pytest.approx(0.1 / 40 / 2) and m.d == 4
    maps2 = build_objective_maps("galerkin", M, 0.5, 0.1, 40, 3, r=4, seed=1)
    assert maps2["xi"].to_dict() == maps["xi"].to_dict()


def test_greedy_examples(rng):
    op, M, U_r = setup(rng)
    maps = identity_maps(M, 3)
    g = greedy_select(op, M, ParameterGrid(np.array([[0.2, 0.4]])), 1, "multi", maps)
    assert g.basis.p == 1 and g.indices == [0]
    one = AffineOperator([op.matrices[0]], [Constant()])
    grid = ParameterGrid(np.linspace(0, 1, 5)[:, None])
    g = greedy_select(one, M, grid, 3, "multi", maps)
    assert g.basis.p == 1 and g.history[-1] <= 1e-8
    grid = ParameterGrid(np.column_stack([np.linspace(0, 1, 20), np.linspace(1, 0, 20)]))
    runs = [greedy_select(op, M, grid, 3, "galerkin", maps, U_r=U_r, gamma=0.4, rhs=random_rhs(np.random.default_rng(1), 10), tol=0.0)
            for _ in range(2)]
    assert runs[0].indices == runs[1].indices and len(runs[0].indices) == 3
    assert runs[0].system.terms.tobytes() == runs[1].system.terms.tobytes()


def test_greedy_first_pick_uses_rhs_or_operator_norm(rng):
    n = 6
    M = metric_factorize(np.eye(n))
    op = AffineOperator([sp.identity(n, format="csr"), sp.identity(n, format="csr")], [Constant(), Power(0)])
    grid = ParameterGrid(np.array([[0.1], [2.0], [2.0], [0.5]]))
    maps = identity_maps(M, 2)
    assert greedy_select(op, M, grid, 1, "multi", maps).indices == [1]


def test_save_load_system(tmp_path, rng):
    op, M, U_r = setup(rng)
    b = build_basis(op, [rng.random(2) for _ in range(2)])
    sys = assemble_system(b, op, M, "galerkin_ur", identity_maps(M, 3), U_r=U_r)
    save_system(sys, tmp_path, points=b.points)
    back, pts = load_system(tmp_path)
    assert back.terms.tobytes() == sys.terms.tobytes() and back.h.tobytes() == sys.h.tobytes()
    mu = rng.random(2)
    assert solve_coefficients(back, mu)[1] == solve_coefficients(sys, mu)[1]
    np.testing.assert_array_equal(pts[1], b.points[1])
