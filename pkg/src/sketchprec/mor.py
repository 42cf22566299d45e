"""Galerkin projection with a preconditioned operator B = R_U P A.

The right-hand side of the preconditioned system is f = R_U P b. Reduced
solutions live in span(U_r); residual norms of r* = f - B u_r drive the
error certificates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as la

from .affine import AffineOperator, AffineVector, coefficient_from_dict
from .errors import DimensionError, NotOrthonormalError, NotThetaOrthonormalError, SingularReducedError
from .indicators import (
    certify_error_multi,
    certify_error_restricted,
    restricted_norm,
    sketched_dual_seminorm,
    sketched_restricted_norm,
)
from .io import read_block, read_json, write_block, write_json
from .linalg import MetricSpace, as_dense, orthonormalize_u
from .sketching import UEmbedding

__all__ = [
    "Certificate",
    "QuasiOptReport",
    "ReducedBasis",
    "ReducedSketches",
    "ReducedSolution",
    "ResidualNorms",
    "build_reduced_sketches",
    "certify",
    "galerkin_solve",
    "load_reduced",
    "project_theta",
    "project_u",
    "quasiopt_report",
    "residual_norms",
    "save_reduced",
    "sketched_galerkin_solve",
]

ORTHO_TOL = 1e-8
FLAVORS = ("U", "Theta")


def _action(B) -> Callable:
    if callable(B):
        return B
    Bd = B
    return lambda V: np.asarray(Bd @ V)


class ReducedSolution(NamedTuple):
    coeffs: np.ndarray
    u_r: np.ndarray | None


@dataclass(eq=False)
class ReducedSketches:
    """Offline sketches for sketched Galerkin solves.

    ``V_terms[:, :, i, j] = Theta Y_i A_j U_r`` and
    ``f_terms[:, i, l] = Theta Y_i b_l``, so that for coefficients lambda
    V_r^Theta(mu) and f^Theta(mu) are cheap contractions.
    """

    UrT: np.ndarray
    V_terms: np.ndarray
    f_terms: np.ndarray
    op_coefficients: tuple
    rhs_coefficients: tuple
    descriptors: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.V_terms.shape[2]

    def V(self, mu, lam) -> np.ndarray:
        phi = np.array([c(mu) for c in self.op_coefficients])
        return np.einsum("krij,i,j->kr", self.V_terms, np.asarray(lam, dtype=float), phi)

    def f(self, mu, lam) -> np.ndarray:
        psi = np.array([c(mu) for c in self.rhs_coefficients])
        return np.einsum("kil,i,l->k", self.f_terms, np.asarray(lam, dtype=float), psi)


@dataclass(eq=False)
class ReducedBasis:
    """Reduced basis U_r, orthonormal in the U or in the Theta inner product."""

    U_r: np.ndarray
    metric: MetricSpace
    flavor: str = "U"
    theta: UEmbedding | None = None
    sketches: ReducedSketches | None = None

    def __post_init__(self):
        self.U_r = as_dense(self.U_r)
        if self.U_r.ndim != 2 or self.U_r.shape[0] != self.metric.n:
            raise DimensionError(f"basis shape {self.U_r.shape} does not match dimension {self.metric.n}")
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        I = np.eye(self.r)
        if self.flavor == "U":
            dev = np.linalg.norm(self.U_r.T @ self.metric.apply_R(self.U_r) - I)
            if dev > ORTHO_TOL:
                raise NotOrthonormalError(f"basis is not U-orthonormal (deviation {dev:.3e})")
        else:
            if self.theta is None:
                raise ValueError("a Theta-orthonormal basis needs Theta")
            UrT = self.theta.apply(self.U_r)
            dev = np.linalg.norm(UrT.T @ UrT - I)
            if dev > ORTHO_TOL:
                raise NotThetaOrthonormalError(f"basis is not Theta-orthonormal (deviation {dev:.3e})")

    @property
    def r(self) -> int:
        return self.U_r.shape[1]


def build_reduced_sketches(rb: ReducedBasis, op: AffineOperator, rhs: AffineVector, basis) -> ReducedSketches:
    """Sketch Theta Y_i A_j U_r and Theta Y_i b_l for every basis element."""
    if rb.theta is None:
        raise ValueError("reduced sketches need Theta")
    th = rb.theta
    V = np.stack(
        [np.stack([th.apply(Y.solve(np.asarray(Aj @ rb.U_r))) for Aj in op.matrices], axis=-1) for Y in basis.factors],
        axis=2,
    )
    F = np.stack([np.stack([th.apply(Y.solve(b)) for b in rhs.vectors], axis=-1) for Y in basis.factors], axis=1)
    return ReducedSketches(th.apply(rb.U_r), V, F, op.coefficients, rhs.coefficients,
                           {"theta": th.omega.to_dict()})


def _solve_small(K, g):
    K = np.atleast_2d(K)
    cond = np.linalg.cond(K) if K.size else 1.0
    if not cond <= 1.0 / np.finfo(float).eps:
        raise SingularReducedError(f"reduced matrix is numerically singular (cond {cond:.3e})")
    return la.solve(K, g)


def galerkin_solve(B_action, f, U_r) -> ReducedSolution:
    """u_r = U_r a with U_r^T (f - B U_r a) = 0."""
    U_r = as_dense(U_r)
    K = U_r.T @ _action(B_action)(U_r)
    a = _solve_small(K, U_r.T @ np.asarray(f, dtype=float))
    return ReducedSolution(a, U_r @ a)


def sketched_galerkin_solve(rb: ReducedBasis, mu, lam) -> ReducedSolution:
    """Solve (Theta U_r)^T (f^Theta - V_r^Theta a) = 0 from the offline sketches."""
    sk = rb.sketches
    if sk is None:
        raise ValueError("the reduced basis carries no sketches")
    V = sk.V(mu, lam)
    a = _solve_small(sk.UrT.T @ V, sk.UrT.T @ sk.f(mu, lam))
    return ReducedSolution(a, rb.U_r @ a)


def project_u(M: MetricSpace, U_r, u) -> np.ndarray:
    """U-orthogonal projection onto span(U_r)."""
    V = orthonormalize_u(M, U_r).V
    return V @ (V.T @ M.apply_R(u))


def project_theta(theta: UEmbedding, U_r, u) -> np.ndarray:
    """Projection onto span(U_r) minimizing the Theta-norm of the error."""
    U_r = as_dense(U_r)
    a = la.lstsq(theta.apply(U_r), theta.apply(u))[0]
    return U_r @ a


class ResidualNorms(NamedTuple):
    dual: float
    restricted: float | None
    sketched: float | None


def residual_norms(B_action, f, u_r, M: MetricSpace, U_m=None, theta: UEmbedding | None = None) -> ResidualNorms:
    """Norms of r* = f - B u_r in U', on U_m' and in the Theta semi-norm on U_m'."""
    r = np.asarray(f, dtype=float) - _action(B_action)(np.asarray(u_r, dtype=float))
    restricted = sk = None
    if U_m is not None:
        V = orthonormalize_u(M, U_m).V
        restricted = float(np.linalg.norm(V.T @ r))
        if theta is not None:
            sk = sketched_dual_seminorm(M, r, theta, U_m)
    return ResidualNorms(M.dual_norm(r), restricted, sk)


@dataclass
class Certificate:
    estimate: float
    interval: tuple | None
    validity: dict

    def __post_init__(self):
        if self.interval is not None:
            lo, hi = self.interval
            if not lo <= self.estimate <= hi:
                raise ValueError(f"estimate {self.estimate} lies outside [{lo}, {hi}]")

    def contains(self, err: float, rtol: float = 1e-12) -> bool:
        if self.interval is None:
            return False
        lo, hi = self.interval
        return lo * (1 - rtol) <= err <= hi * (1 + rtol)


def certify(indicators: dict, residual: float, kind: str = "multi", tau: float | None = None,
            eps: float | None = None) -> Certificate:
    """Certificate for ||u - u_r||_U.

    ``kind="multi"`` uses ``indicators["delta_uu"]`` with the U' residual
    norm. ``"restricted"`` and ``"sketched"`` use ``indicators["e_mm"]`` and
    ``indicators["e_um"]`` (upper bounds for the restricted norms of E) with
    the residual measured on U_m, and need ``tau`` (plus ``eps`` for the
    sketched case). ``estimate`` is the residual norm itself.
    """
    if kind == "multi":
        iv = certify_error_multi(indicators["delta_uu"], residual)
    elif kind in ("restricted", "sketched"):
        if tau is None:
            raise ValueError(f"the {kind} certificate needs tau")
        iv = certify_error_restricted(indicators["e_mm"], indicators["e_um"], tau, residual,
                                      sketched=kind == "sketched", eps=eps)
    else:
        raise ValueError(f"unknown certificate kind {kind!r}")
    return Certificate(residual, iv, {"kind": kind, "holds": iv is not None, "tau": tau, "eps": eps})


class QuasiOptReport(NamedTuple):
    classical: float | None
    sketched: float | None
    e_rr: float
    e_ur: float
    e_rr_theta: float | None
    e_ur_theta: float | None


def quasiopt_report(E, U_r, M: MetricSpace, theta: UEmbedding | None = None,
                    eps: float | None = None) -> QuasiOptReport:
    """Quasi-optimality constants of the classical and sketched projections.

    The classical constant bounds ||u - u_r|| / ||u - P_Ur u|| in the U norm;
    the sketched one bounds the same error relative to the Theta-projection
    error. Either is None when its validity condition fails.
    """
    E = as_dense(E)
    e_rr = restricted_norm(M, E, U_r, U_r)
    e_ur = restricted_norm(M, E, None, U_r)
    classical = 1.0 + e_ur / (1.0 - e_rr) if e_rr < 1.0 else None
    er_t = eu_t = sk = None
    if theta is not None:
        if eps is None:
            raise ValueError("the sketched constant needs the design eps of Theta")
        er_t = sketched_restricted_norm(M, E, theta, U_r, U_r)
        eu_t = sketched_restricted_norm(M, E, theta, U_r)
        if er_t < math.sqrt(1.0 - eps):
            sk = 1.0 + eu_t / (math.sqrt(1.0 - eps) - er_t)
    return QuasiOptReport(classical, sk, e_rr, e_ur, er_t, eu_t)


def save_reduced(sk: ReducedSketches, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_block(directory / "reduced_UrT", sk.UrT)
    write_block(directory / "reduced_V", sk.V_terms)
    write_block(directory / "reduced_f", sk.f_terms)
    return write_json(directory / "reduced.json", {
        "op_coefficients": [c.to_dict() for c in sk.op_coefficients],
        "rhs_coefficients": [c.to_dict() for c in sk.rhs_coefficients],
        "descriptors": sk.descriptors,
    })


def load_reduced(directory) -> ReducedSketches:
    directory = Path(directory)
    meta = read_json(directory / "reduced.json")
    return ReducedSketches(
        read_block(directory / "reduced_UrT"),
        read_block(directory / "reduced_V"),
        read_block(directory / "reduced_f"),
        tuple(coefficient_from_dict(c) for c in meta["op_coefficients"]),
        tuple(coefficient_from_dict(c) for c in meta["rhs_coefficients"]),
        meta["descriptors"],
    )
