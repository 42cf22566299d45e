"""Metric-aware linear algebra on U = R^n.

The solution space carries the inner product <x, y>_U = y^T R_U x for a
symmetric positive definite R_U, and its dual U' carries <x, y>_U' =
y^T R_U^{-1} x. Everything here goes through a factor Q with Q^T Q = R_U,
taken as the upper Cholesky factor so that s = n.

Hilbert-Schmidt norms reduce to Frobenius norms of transformed matrices:

    HS(U, U')   ||Q^{-T} C Q^{-1}||_F
    HS(U', U)   ||Q C Q^T||_F
    HS(l2, U)   ||Q C||_F
    HS(l2, U')  ||Q^{-T} C||_F
    HS(l2, l2)  ||C||_F
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DimensionError, NotSPDError, RankDeficientError, SingularError

__all__ = [
    "HS_MODES",
    "FactorizedInverse",
    "MetricSpace",
    "OrthoResult",
    "SingularBounds",
    "as_dense",
    "hs_norm",
    "lu_factorize",
    "metric_factorize",
    "norm_u",
    "norm_u_dual",
    "orthonormalize_u",
    "singular_bounds",
]

HS_MODES = ("U->U'", "U'->U", "l2->U", "l2->U'", "l2->l2")

# Gram matrices with a larger condition number are rejected.
GRAM_COND_LIMIT = 1e12


def as_dense(C) -> np.ndarray:
    if sp.issparse(C):
        return C.toarray()
    return np.asarray(C, dtype=float)


@dataclass(frozen=True, eq=False)
class MetricSpace:
    """SPD metric R_U together with its upper Cholesky factor Q.

    Build instances with :func:`metric_factorize`; the constructor does not
    validate anything.
    """

    R: np.ndarray | sp.csr_matrix
    Q: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[1]

    @property
    def s(self) -> int:
        """Row count of Q."""
        return self.Q.shape[0]

    def _check_rows(self, X, name="operand"):
        if X.shape[0] != self.n:
            raise DimensionError(f"{name} has {X.shape[0]} rows, expected {self.n}")

    def apply_R(self, X):
        X = np.asarray(X, dtype=float)
        self._check_rows(X)
        return np.asarray(self.R @ X)

    def solve(self, Y):
        """R_U^{-1} Y for a vector or a block of columns."""
        Y = np.asarray(Y, dtype=float)
        self._check_rows(Y)
        return la.cho_solve((self.Q, False), Y)

    def apply_Q(self, X):
        X = np.asarray(X, dtype=float)
        self._check_rows(X)
        return self.Q @ X

    def apply_Qt(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.s:
            raise DimensionError(f"operand has {Y.shape[0]} rows, expected {self.s}")
        return self.Q.T @ Y

    def solve_Q(self, Y):
        """Q^{-1} Y."""
        Y = np.asarray(Y, dtype=float)
        return la.solve_triangular(self.Q, Y, lower=False)

    def solve_Qt(self, X):
        """Q^{-T} X."""
        X = np.asarray(X, dtype=float)
        self._check_rows(X)
        return la.solve_triangular(self.Q, X, lower=False, trans="T")

    def inner(self, x, y) -> float:
        return float(np.dot(self.apply_R(x), y))

    def norm(self, v) -> float:
        return norm_u(self, v)

    def dual_norm(self, r) -> float:
        return norm_u_dual(self, r)


def metric_factorize(R) -> MetricSpace:
    """Factorize an SPD metric matrix.

    Raises
    ------
    NotSPDError
        If R is not (numerically) symmetric or Cholesky hits a nonpositive pivot.
    """
    Rd = as_dense(R)
    if Rd.ndim != 2 or Rd.shape[0] != Rd.shape[1]:
        raise DimensionError(f"metric must be square, got shape {Rd.shape}")
    asym = np.linalg.norm(Rd - Rd.T)
    if asym > 1e-12 * max(np.linalg.norm(Rd), 1.0):
        raise NotSPDError(f"metric is not symmetric (||R - R^T||_F = {asym:.3e})")
    Rd = 0.5 * (Rd + Rd.T)
    try:
        Q = la.cholesky(Rd, lower=False)
    except la.LinAlgError as exc:
        raise NotSPDError(str(exc)) from exc
    if sp.issparse(R):
        Rs = sp.csr_matrix(R, dtype=float)
        Rs = (0.5 * (Rs + Rs.T)).tocsr()
        Rs.sort_indices()
        return MetricSpace(R=Rs, Q=Q)
    return MetricSpace(R=Rd, Q=Q)


def norm_u(M: MetricSpace, v) -> float:
    """||v||_U = sqrt(v^T R_U v)."""
    v = np.asarray(v, dtype=float)
    M._check_rows(v, "vector")
    return float(np.linalg.norm(M.Q @ v))


def norm_u_dual(M: MetricSpace, r) -> float:
    """||r||_U' = sqrt(r^T R_U^{-1} r)."""
    r = np.asarray(r, dtype=float)
    M._check_rows(r, "vector")
    return float(np.linalg.norm(M.solve_Qt(r)))


def hs_norm(M: MetricSpace, C, mode: str) -> float:
    """Hilbert-Schmidt norm of C for the given domain/codomain pair.

    ``mode`` is one of ``HS_MODES``. The ``l2->...`` modes accept any number
    of columns; ``U->U'`` and ``U'->U`` require an n-by-n matrix.
    """
    if mode not in HS_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {HS_MODES}")
    C = as_dense(C)
    if C.ndim == 1:
        C = C[:, None]
    if mode == "l2->l2":
        return float(np.linalg.norm(C))
    M._check_rows(C, "matrix")
    if mode == "l2->U":
        return float(np.linalg.norm(M.Q @ C))
    if mode == "l2->U'":
        return float(np.linalg.norm(M.solve_Qt(C)))
    if C.shape[1] != M.n:
        raise DimensionError(f"mode {mode} needs a square {M.n}x{M.n} matrix, got {C.shape}")
    if mode == "U->U'":
        return float(np.linalg.norm(M.solve_Qt(M.solve_Qt(C).T)))
    return float(np.linalg.norm(M.Q @ C @ M.Q.T))


class SingularBounds(NamedTuple):
    alpha: float
    beta: float
    kappa: float


def singular_bounds(M: MetricSpace, C, V_basis=None, W_basis=None) -> SingularBounds:
    """Extreme singular values of C seen as an operator U -> U'.

    With ``V_basis`` and/or ``W_basis`` the operator is restricted to
    span(V) -> span(W)', in which case ``beta`` is the restricted norm
    ||C||_{V,W'}. ``alpha`` is zero when the restricted target has lower
    dimension than the source.
    """
    C = as_dense(C)
    if C.shape != (M.n, M.n):
        raise DimensionError(f"expected a {M.n}x{M.n} operator, got {C.shape}")
    right = M.solve_Q(np.eye(M.n)) if V_basis is None else orthonormalize_u(M, V_basis).V
    if W_basis is None:
        G = M.solve_Qt(C @ right)
    else:
        G = orthonormalize_u(M, W_basis).V.T @ (C @ right)
    s = la.svdvals(G)
    beta = float(s[0]) if s.size else 0.0
    alpha = float(s[-1]) if G.shape[0] >= G.shape[1] and s.size else 0.0
    kappa = beta / alpha if alpha > 0.0 else float("inf")
    return SingularBounds(alpha, beta, kappa)


class OrthoResult(NamedTuple):
    V: np.ndarray
    T: np.ndarray
    sigma_min: float
    sigma_max: float


def orthonormalize_u(M: MetricSpace, V) -> OrthoResult:
    """Return V T with U-orthonormal columns.

    Uses a thin QR of Q V with a positive diagonal, so an already
    U-orthonormal input comes back with T = I. ``sigma_min``/``sigma_max``
    are the extreme singular values of the input V in the U metric.
    """
    V = as_dense(V)
    if V.ndim == 1:
        V = V[:, None]
    M._check_rows(V, "basis")
    if V.shape[1] > M.n:
        raise RankDeficientError(f"{V.shape[1]} vectors cannot be independent in dimension {M.n}")
    _, R1 = la.qr(M.Q @ V, mode="economic")
    signs = np.where(np.diag(R1) < 0.0, -1.0, 1.0)
    R1 = signs[:, None] * R1
    sv = la.svdvals(R1)
    smax, smin = float(sv[0]), float(sv[-1])
    if smin == 0.0 or (smax / smin) ** 2 > GRAM_COND_LIMIT:
        raise RankDeficientError(
            f"Gram matrix condition number {(smax / smin) ** 2 if smin else np.inf:.3e} exceeds {GRAM_COND_LIMIT:.0e}"
        )
    T = la.solve_triangular(R1, np.eye(R1.shape[0]), lower=False)
    return OrthoResult(V @ T, T, smin, smax)


class FactorizedInverse:
    """Sparse LU factorization standing in for A^{-1}.

    Wraps SuperLU. A single instance should be used by one thread at a time;
    create one factorization per worker for concurrent solves.
    """

    def __init__(self, source):
        A = sp.csc_matrix(source, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"cannot factorize non-square matrix {A.shape}")
        self.source = A
        try:
            self._lu = splu(A)
        except RuntimeError as exc:
            raise SingularError(str(exc)) from exc
        piv = np.abs(self._lu.U.diagonal())
        if piv.size and (not np.all(np.isfinite(piv)) or piv.min() <= A.shape[0] * np.finfo(float).eps * piv.max()):
            raise SingularError("zero pivot after partial pivoting")

    @property
    def n(self) -> int:
        return self.source.shape[0]

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.n:
            raise DimensionError(f"right-hand side has {y.shape[0]} rows, expected {self.n}")
        return y

    def solve(self, y):
        """A^{-1} y."""
        return self._lu.solve(self._check(y))

    def adjoint_solve(self, y):
        """A^{-T} y."""
        return self._lu.solve(self._check(y), trans="T")

    def dense(self) -> np.ndarray:
        return self.solve(np.eye(self.n))


def lu_factorize(A) -> FactorizedInverse:
    return FactorizedInverse(A)
