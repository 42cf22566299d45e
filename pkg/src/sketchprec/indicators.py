"""Preconditioner quality indicators and the bounds they certify.

Everything is expressed through the error matrix E = R_U - R_U P A, with
B = R_U P A the preconditioned operator. Exact indicators densify E and
serve as oracles at desk scale; the sketched and randomized ones only need
products with E, E^T and R_U^{-1} E.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DenominatorNonpositiveError, DimensionError, NotOrthonormalError, NotThetaOrthonormalError
from .linalg import MetricSpace, as_dense, hs_norm, orthonormalize_u
from .operator_sketch import OperatorSketchMap, apply_lambda, apply_psi, apply_xi
from .sketching import UEmbedding

__all__ = [
    "EXACT_LIMIT",
    "ErrorMatrixAction",
    "IndicatorReport",
    "certify_error_multi",
    "certify_error_restricted",
    "cond_bound",
    "delta_estimators_lambda_xi",
    "delta_galerkin_exact",
    "delta_galerkin_sketched_exactTheta",
    "delta_uu_exact",
    "delta_uu_sketched",
    "galerkin_quasiopt_bound",
    "gamma_from_target",
    "restricted_norm",
    "sketched_dual_seminorm",
    "sketched_restricted_norm",
    "theta_orthonormalize",
]

# Largest dimension for which dense oracles are evaluated.
EXACT_LIMIT = 2000
ORTHO_TOL = 1e-8

INDICATOR_KINDS = (
    "delta_uu",
    "delta_urur",
    "delta_uur",
    "delta_theta_urur",
    "delta_theta_uur",
    "delta_uu_psi",
    "delta_urur_lambda",
    "delta_uur_xi",
    "delta_theta_urur_lambda",
    "delta_theta_uur_xi",
)


class ErrorMatrixAction:
    """Matrix-free access to E = R_U (I - P A) at one parameter value.

    Parameters
    ----------
    metric : MetricSpace
    A : matrix
        Assembled operator A(mu), sparse or dense.
    P_apply, P_adjoint : callables
        Block actions V -> P V and V -> P^T V.
    """

    def __init__(self, metric: MetricSpace, A, P_apply: Callable, P_adjoint: Callable | None = None):
        self.metric = metric
        self.A = A if sp.issparse(A) else np.asarray(A, dtype=float)
        if self.A.shape != (metric.n, metric.n):
            raise DimensionError(f"operator shape {self.A.shape} does not match metric dimension {metric.n}")
        self._P = P_apply
        self._Pt = P_adjoint

    @classmethod
    def from_matrix(cls, metric: MetricSpace, A, P) -> "ErrorMatrixAction":
        P = as_dense(P)
        return cls(metric, A, P.__matmul__, P.T.__matmul__)

    @property
    def n(self) -> int:
        return self.metric.n

    def pa_apply(self, V):
        """P A V, i.e. R_U^{-1} B V."""
        return np.asarray(self._P(np.asarray(self.A @ V)))

    def apply_B(self, V):
        return self.metric.apply_R(self.pa_apply(V))

    def apply(self, V):
        """E V."""
        V = np.asarray(V, dtype=float)
        return self.metric.apply_R(V - self.pa_apply(V))

    def apply_adjoint(self, V):
        """E^T V = R_U V - A^T P^T R_U V."""
        if self._Pt is None:
            raise ValueError("this error action has no adjoint preconditioner")
        RV = self.metric.apply_R(np.asarray(V, dtype=float))
        return RV - np.asarray(self.A.T @ self._Pt(RV))

    def rinv_apply(self, V):
        """R_U^{-1} E V = V - P A V."""
        V = np.asarray(V, dtype=float)
        return V - self.pa_apply(V)

    def rinv_apply_rinv(self, Y):
        """R_U^{-1} E R_U^{-1} Y."""
        return self.rinv_apply(self.metric.solve(Y))

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.n))


def _dense_E(E) -> np.ndarray:
    if isinstance(E, ErrorMatrixAction):
        if E.n > EXACT_LIMIT:
            raise ValueError(f"exact indicators are limited to n <= {EXACT_LIMIT}")
        return E.dense()
    return as_dense(E)


@dataclass
class IndicatorReport:
    value: float
    kind: str
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise ValueError(f"unknown indicator kind {self.kind!r}")
        if not (math.isfinite(self.value) and self.value >= 0.0):
            raise ValueError(f"indicator value must be finite and nonnegative, got {self.value}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, **self.context}


def delta_uu_exact(E, M: MetricSpace) -> float:
    """||E||_HS(U,U')."""
    return hs_norm(M, _dense_E(E), "U->U'")


def delta_uu_sketched(E_action: ErrorMatrixAction, psi_map: OperatorSketchMap) -> float:
    """||Psi(R_U^{-1} E R_U^{-1})||_2."""
    return float(np.linalg.norm(apply_psi(psi_map, E_action.rinv_apply_rinv)))


def _check_u_orthonormal(M: MetricSpace, U_r):
    G = U_r.T @ M.apply_R(U_r)
    dev = np.linalg.norm(G - np.eye(U_r.shape[1]))
    if dev > ORTHO_TOL:
        raise NotOrthonormalError(f"basis Gram matrix deviates from identity by {dev:.3e}")


def _check_theta_orthonormal(UrT):
    dev = np.linalg.norm(UrT.T @ UrT - np.eye(UrT.shape[1]))
    if dev > ORTHO_TOL:
        raise NotThetaOrthonormalError(f"sketched basis deviates from orthonormal by {dev:.3e}")


def delta_galerkin_exact(E, U_r, M: MetricSpace) -> tuple[float, float]:
    """(||U_r^T E U_r||_F, ||E^T U_r||_HS(l2,U')) for a U-orthonormal U_r."""
    U_r = as_dense(U_r)
    _check_u_orthonormal(M, U_r)
    Ed = _dense_E(E)
    d_rr = float(np.linalg.norm(U_r.T @ Ed @ U_r))
    d_ur = float(np.linalg.norm(M.solve_Qt(Ed.T @ U_r)))
    return d_rr, d_ur


def theta_orthonormalize(theta: UEmbedding, U_r):
    """Return (U_r T, T) such that Theta U_r T has orthonormal columns."""
    U_r = as_dense(U_r)
    _, R1 = la.qr(theta.apply(U_r), mode="economic")
    signs = np.where(np.diag(R1) < 0.0, -1.0, 1.0)
    T = la.solve_triangular(signs[:, None] * R1, np.eye(R1.shape[0]), lower=False)
    return U_r @ T, T


def delta_galerkin_sketched_exactTheta(E_action: ErrorMatrixAction, U_r, theta: UEmbedding) -> tuple[float, float]:
    """Sketched Galerkin indicators for a Theta-orthonormal U_r.

    Returns ``||I - (Theta U_r)^T Theta P A U_r||_F`` and
    ``||E^T R_U^{-1} Theta^T Theta U_r||_HS(l2,U')``.
    """
    U_r = as_dense(U_r)
    UrT = theta.apply(U_r)
    _check_theta_orthonormal(UrT)
    VrT = theta.apply(E_action.pa_apply(U_r))
    d_rr = float(np.linalg.norm(np.eye(U_r.shape[1]) - UrT.T @ VrT))
    W = theta.apply_transpose(UrT)
    M = E_action.metric
    d_ur = float(np.linalg.norm(M.solve_Qt(E_action.apply_adjoint(M.solve(W)))))
    return d_rr, d_ur


def delta_estimators_lambda_xi(E_action: ErrorMatrixAction, U_r, lambda_map: OperatorSketchMap,
                               xi_map: OperatorSketchMap, sketched: bool = False,
                               theta: UEmbedding | None = None) -> tuple[float, float]:
    """Randomized estimates of the two Galerkin indicators.

    The classical family sketches U_r^T E U_r with Lambda and
    R_U^{-1} E^T U_r with Xi; the Theta family inserts Theta^T Theta as in
    the sketched indicators.
    """
    U_r = as_dense(U_r)
    M = E_action.metric
    if sketched:
        if theta is None:
            raise ValueError("the sketched family needs Theta")
        UrT = theta.apply(U_r)
        small = UrT.T @ theta.apply(E_action.rinv_apply(U_r))
        tall = M.solve(E_action.apply_adjoint(M.solve(theta.apply_transpose(UrT))))
    else:
        small = U_r.T @ E_action.apply(U_r)
        tall = M.solve(E_action.apply_adjoint(U_r))
    est_r = float(np.linalg.norm(apply_lambda(lambda_map, small)))
    est_full = float(np.linalg.norm(apply_xi(xi_map, tall)))
    return est_r, est_full


def restricted_norm(M: MetricSpace, C, V_basis=None, W_basis=None) -> float:
    """||C||_{V,W'}: largest singular value of C restricted to V -> W'."""
    C = as_dense(C)
    right = M.solve_Q(np.eye(M.n)) if V_basis is None else orthonormalize_u(M, V_basis).V
    CV = C @ right
    G = M.solve_Qt(CV) if W_basis is None else orthonormalize_u(M, W_basis).V.T @ CV
    return float(la.svdvals(G)[0]) if G.size else 0.0


def sketched_restricted_norm(M: MetricSpace, C, theta: UEmbedding, W_basis, V_basis=None) -> float:
    """max over v in V of ||C v||^Theta_{W'} / ||v||_U (V = U when omitted)."""
    C = as_dense(C)
    W, _ = theta_orthonormalize(theta, W_basis)
    right = M.solve_Q(np.eye(M.n)) if V_basis is None else orthonormalize_u(M, V_basis).V
    G = theta.apply(W).T @ theta.apply(M.solve(C @ right))
    return float(la.svdvals(G)[0]) if G.size else 0.0


def sketched_dual_seminorm(M: MetricSpace, r, theta: UEmbedding, W_basis) -> float:
    """||r||^Theta_{W'}: Theta-norm of the Theta-projection of R_U^{-1} r onto W."""
    W, _ = theta_orthonormalize(theta, W_basis)
    return float(np.linalg.norm(theta.apply(W).T @ theta.apply(M.solve(np.asarray(r, dtype=float)))))


# bounds ---------------------------------------------------------------


def _nonneg(*xs):
    for x in xs:
        if x is not None and x < 0:
            raise ValueError(f"indicator values must be nonnegative, got {x}")


def cond_bound(delta_uu: float) -> float | None:
    """Upper bound (1 + D)/(1 - D) on kappa(B), or None when D >= 1."""
    _nonneg(delta_uu)
    if delta_uu >= 1.0:
        return None
    return (1.0 + delta_uu) / (1.0 - delta_uu)


def galerkin_quasiopt_bound(delta_uu, delta_uur, delta_urur, sigma_r: float) -> float | None:
    """Quasi-optimality constant of the preconditioned Galerkin projection.

    Any indicator may be None (treated as unavailable). ``sigma_r`` is the
    smallest U-singular value of the basis.
    """
    _nonneg(delta_uu, delta_uur, delta_urur)
    if sigma_r <= 0:
        raise ValueError("sigma_r must be positive")
    inf = math.inf
    a = inf if delta_uu is None else delta_uu
    b = inf if delta_uur is None else delta_uur / sigma_r
    c = inf if delta_urur is None else delta_urur / sigma_r**2
    low = min(a, b, c)
    if low >= 1.0:
        return None
    num = min(a, b)
    if math.isinf(num):
        return None
    return 1.0 + num / (1.0 - low)


def gamma_from_target(K_star: float, sigma_r: float) -> float:
    """Weight of the U,U_r' indicator targeting quasi-optimality constant K*."""
    if sigma_r <= 0:
        raise ValueError("sigma_r must be positive")
    den = (2.0 * (K_star - 1.0) / sigma_r) ** 2 - 1.0
    if den <= 0.0:
        raise DenominatorNonpositiveError(f"K*={K_star} with sigma_r={sigma_r} gives denominator {den}")
    return 1.0 / den


def certify_error_multi(delta_uu: float, res_dual: float):
    """Two-sided bound on ||u - u_r||_U from ||r*||_U', or None when D >= 1."""
    _nonneg(delta_uu, res_dual)
    if delta_uu >= 1.0:
        return None
    return res_dual / (1.0 + delta_uu), res_dual / (1.0 - delta_uu)


def certify_error_restricted(e_mm: float, e_um: float, tau: float, res_m: float,
                             sketched: bool = False, eps: float | None = None):
    """Two-sided error bound from the residual measured on a richer space U_m.

    ``e_mm`` and ``e_um`` bound ||E||_{U_m,U_m'} and ||E||_{U,U_m'} (their
    Theta variants when ``sketched``), ``tau`` bounds the relative best
    approximation error of U_m (tau* when sketched), and ``eps`` is the
    design accuracy of Theta. Returns None when the validity condition fails.
    """
    _nonneg(e_mm, e_um, tau, res_m)
    a = e_mm + tau * e_um
    if sketched:
        if eps is None:
            raise ValueError("the sketched certificate needs eps")
        top = 1.0 - eps - tau**2
        if top <= 0.0 or a >= math.sqrt(top):
            return None
        return res_m / (math.sqrt(1.0 + eps) + a), res_m / (math.sqrt(top) - a)
    if tau >= 1.0 or a >= math.sqrt(1.0 - tau**2):
        return None
    return res_m / (1.0 + a), res_m / (math.sqrt(1.0 - tau**2) - a)
