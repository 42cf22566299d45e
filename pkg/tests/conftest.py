import numpy as np
import pytest
import scipy.sparse as sp

from sketchprec.affine import AffineOperator, AffineVector, Constant, Power
from sketchprec.linalg import metric_factorize


def random_spd(rng, n, shift=None):
    B = rng.standard_normal((n, n))
    return B @ B.T + (n if shift is None else shift) * np.eye(n)


def random_metric(rng, n):
    return metric_factorize(random_spd(rng, n))


def random_affine(rng, n, m_A=3, spread=0.3):
    """Well-conditioned random affine operator with phi = (1, mu_0, mu_1, ...)."""
    mats = [sp.csr_matrix(np.eye(n) * 2.0 + spread * rng.standard_normal((n, n)) / np.sqrt(n))]
    for _ in range(m_A - 1):
        mats.append(sp.csr_matrix(np.diag(rng.uniform(0.0, 1.0, n)) + 0.05 * rng.standard_normal((n, n)) / np.sqrt(n)))
    coeffs = [Constant(1.0)] + [Power(j) for j in range(m_A - 1)]
    return AffineOperator(mats, coeffs)


def random_rhs(rng, n):
    return AffineVector([rng.standard_normal(n)], [Constant(1.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def error_instance(rng, n, r, pert=0.05):
    """Metric, operator A, nearly exact preconditioner P, E = R(I - PA) and a U-orthonormal basis."""
    from sketchprec.linalg import orthonormalize_u

    M = random_metric(rng, n)
    A = np.eye(n) * 2.0 + rng.standard_normal((n, n)) / np.sqrt(n)
    Ainv = np.linalg.inv(A)
    P = Ainv + pert * np.linalg.norm(Ainv, 2) * rng.standard_normal((n, n)) / np.sqrt(n)
    E = M.R @ (np.eye(n) - P @ A)
    U_r = orthonormalize_u(M, rng.standard_normal((n, r))).V
    return M, A, P, E, U_r
