"""Parameter-dependent preconditioners P(mu) = sum_i lambda_i(mu) A(mu_i)^{-1}.

Offline, a basis of factorized inverses is built and, for a chosen error
indicator, the sketched least-squares system

    min_lambda || W_p(mu) lambda - h(mu) ||_2,    W_p(mu) = sum_j phi_j(mu) W_j

is assembled term by term. Online, only the k x p x m_A array of terms and
h are needed; coefficients come from a small QR (or truncated SVD) solve.

Objectives and the sketched matrices they use (columns for basis element i
and affine term j; h is the same for every mu):

    multi        Psi(Y_i A_j R^{-1})                 h = Psi(R^{-1})
    galerkin_rr  Lambda(U_r^T R Y_i A_j U_r)         h = Lambda(U_r^T R U_r)
    galerkin_ur  Xi(R^{-1} A_j^T Y_i^T R U_r)        h = Xi(U_r)
    sketched_rr  Lambda((Th U_r)^T Th Y_i A_j U_r)   h = Lambda((Th U_r)^T Th U_r)
    sketched_ur  Xi(R^{-1} A_j^T Y_i^T G)            h = Xi(R^{-1} G),  G = Th^T Th U_r

``galerkin`` and ``sketched`` stack sqrt(gamma) times the ``_ur`` block on
top of the ``_rr`` block.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as la

from .affine import AffineOperator, AffineVector, ParameterGrid, coefficient_from_dict
from .errors import DenominatorNonpositiveError, DimensionError, NotOrthonormalError, NotThetaOrthonormalError, SingularError
from .indicators import gamma_from_target
from .io import read_block, read_json, write_block, write_json
from .linalg import FactorizedInverse, MetricSpace, as_dense, lu_factorize, orthonormalize_u
from .operator_sketch import apply_lambda, apply_psi, apply_xi, build_sketch_map
from .sketching import SketchingMatrix, UEmbedding, gaussian_min_rows, union_delta

__all__ = [
    "OBJECTIVES",
    "PHI_SEED_MASK",
    "GreedyResult",
    "IndicatorSystem",
    "PreconditionerAction",
    "PreconditionerBasis",
    "SystemAssembler",
    "apply_preconditioner",
    "assemble_system",
    "build_basis",
    "build_objective_maps",
    "compress_online",
    "default_gamma",
    "greedy_select",
    "load_system",
    "online_sketch",
    "save_system",
    "solve_coefficients",
]

log = logging.getLogger(__name__)

OBJECTIVES = ("multi", "galerkin_rr", "galerkin_ur", "galerkin", "sketched_rr", "sketched_ur", "sketched")
# Maps each objective needs, by role.
_NEEDS = {
    "multi": ("psi",),
    "galerkin_rr": ("lambda",),
    "galerkin_ur": ("xi",),
    "galerkin": ("lambda", "xi"),
    "sketched_rr": ("lambda",),
    "sketched_ur": ("xi",),
    "sketched": ("lambda", "xi"),
}
PHI_SEED_MASK = 0x5A5A5A5A5A5A5A5A
RCOND = 1e-10
ORTHO_TOL = 1e-8


# basis ----------------------------------------------------------------


@dataclass
class PreconditionerBasis:
    """Interpolation points and the factorized inverses Y_i = A(mu_i)^{-1}."""

    points: list = field(default_factory=list)
    factors: list = field(default_factory=list)
    # (point, reason) for every point that could not be factorized
    rejected: list = field(default_factory=list)

    @property
    def p(self) -> int:
        return len(self.factors)

    def append(self, mu, factor: FactorizedInverse):
        self.points.append(np.atleast_1d(np.asarray(mu, dtype=float)))
        self.factors.append(factor)

    def action(self, coeffs) -> "PreconditionerAction":
        return PreconditionerAction(self, np.asarray(coeffs, dtype=float))


def _try_factorize(op: AffineOperator, mu):
    try:
        return lu_factorize(op.assemble(mu)), None
    except SingularError as exc:
        return None, str(exc)


def build_basis(op: AffineOperator, points: Sequence) -> PreconditionerBasis:
    """Factorize A at every point; singular points are skipped and reported."""
    basis = PreconditionerBasis()
    for mu in points:
        fac, why = _try_factorize(op, mu)
        if fac is None:
            basis.rejected.append((np.atleast_1d(np.asarray(mu, dtype=float)), why))
        else:
            basis.append(mu, fac)
    if basis.p == 0:
        raise SingularError(f"all {len(basis.rejected)} interpolation points are singular")
    return basis


class PreconditionerAction:
    """v -> sum_i lambda_i Y_i v through p factorized solves."""

    def __init__(self, basis: PreconditionerBasis, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (basis.p,):
            raise DimensionError(f"expected {basis.p} coefficients, got shape {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("preconditioner coefficients must be finite")
        self.basis = basis
        self.coeffs = coeffs

    def __call__(self, V):
        return self.apply(V)

    def apply(self, V):
        V = np.asarray(V, dtype=float)
        out = np.zeros_like(V)
        for c, Y in zip(self.coeffs, self.basis.factors):
            if c != 0.0:
                out += c * Y.solve(V)
        return out

    def apply_adjoint(self, V):
        V = np.asarray(V, dtype=float)
        out = np.zeros_like(V)
        for c, Y in zip(self.coeffs, self.basis.factors):
            if c != 0.0:
                out += c * Y.adjoint_solve(V)
        return out

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.basis.factors[0].n))


def apply_preconditioner(act: PreconditionerAction, v) -> np.ndarray:
    return act.apply(v)


# indicator system -----------------------------------------------------


@dataclass(eq=False)
class IndicatorSystem:
    """Affine least-squares system; ``terms[:, i, j]`` is the column w_{i,j}."""

    objective: str
    terms: np.ndarray
    h: np.ndarray
    coefficients: tuple
    descriptors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.terms = np.asarray(self.terms, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.terms.ndim != 3 or self.terms.shape[0] != self.h.shape[0]:
            raise DimensionError(f"term array {self.terms.shape} does not match h {self.h.shape}")
        if self.terms.shape[2] != len(self.coefficients):
            raise DimensionError("one coefficient function per affine term is required")
        if not (np.all(np.isfinite(self.terms)) and np.all(np.isfinite(self.h))):
            raise ValueError("indicator system contains non-finite entries")

    @property
    def k(self) -> int:
        return self.terms.shape[0]

    @property
    def p(self) -> int:
        return self.terms.shape[1]

    def phi(self, mu) -> np.ndarray:
        return np.array([f(mu) for f in self.coefficients], dtype=float)

    def evaluate_phi(self, phi):
        return self.terms @ np.asarray(phi, dtype=float), self.h

    def evaluate(self, mu):
        """(W_p(mu), h(mu))."""
        return self.evaluate_phi(self.phi(mu))

    def truncate(self, p: int) -> "IndicatorSystem":
        """System restricted to the first p basis elements."""
        return IndicatorSystem(self.objective, self.terms[:, :p].copy(), self.h, self.coefficients, self.descriptors)


def lstsq_qr(W, h):
    """Least squares by column-pivoted Householder QR, truncated SVD if rank deficient."""
    W = np.asarray(W, dtype=float)
    h = np.asarray(h, dtype=float)
    k, p = W.shape
    if k < p:
        raise DimensionError(f"need at least as many rows as unknowns, got {k} x {p}")
    Qf, Rf, piv = la.qr(W, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rf))
    lam = np.zeros(p)
    if p and d[0] > 0.0 and d[-1] > RCOND * d[0]:
        lam[piv] = la.solve_triangular(Rf, Qf.T @ h, lower=False)
    elif p and d[0] > 0.0:
        U, s, Vt = la.svd(W, full_matrices=False)
        keep = s > RCOND * s[0]
        lam = Vt[keep].T @ ((U[:, keep].T @ h) / s[keep])
    return lam, float(np.linalg.norm(W @ lam - h))


def solve_coefficients(sys: IndicatorSystem, mu):
    """Coefficients lambda(mu) and the achieved residual (the indicator value)."""
    W, h = sys.evaluate(mu)
    return lstsq_qr(W, h)


def compress_online(sys: IndicatorSystem, phi: SketchingMatrix) -> IndicatorSystem:
    """Replace every term and h by its image under the sketch Phi."""
    if phi.n != sys.k:
        raise DimensionError(f"Phi has {phi.n} columns, the system has {sys.k} rows")
    k, p, m = sys.terms.shape
    terms = phi.apply(sys.terms.reshape(k, p * m)).reshape(phi.k, p, m)
    desc = dict(sys.descriptors, phi=phi.to_dict())
    return IndicatorSystem(sys.objective, terms, phi.apply(sys.h), sys.coefficients, desc)


def online_sketch(sys: IndicatorSystem, n_test: int, delta: float, seed: int,
                  eps: float = 0.5, kind: str = "gaussian") -> SketchingMatrix:
    """Phi sized for (eps, delta/#P_test, p+1), seeded apart from the offline maps.

    Falls back to the identity when the calculator asks for at least k rows.
    """
    k_phi = gaussian_min_rows(eps, union_delta(delta, n_test), sys.p + 1)
    if k_phi >= sys.k:
        return SketchingMatrix.identity(sys.k)
    return SketchingMatrix(kind, k_phi, sys.k, seed ^ PHI_SEED_MASK)


# assembly -------------------------------------------------------------


def default_gamma(U_r, M: MetricSpace, K_star: float = 1.5) -> float:
    """gamma for target constant K*, falling back to K* = 2 when K* is infeasible."""
    sigma = orthonormalize_u(M, U_r).sigma_min
    try:
        return gamma_from_target(K_star, sigma)
    except DenominatorNonpositiveError:
        return gamma_from_target(2.0, sigma)


class SystemAssembler:
    """Computes h once and the m_A columns contributed by each basis element."""

    def __init__(self, op: AffineOperator, M: MetricSpace, objective: str, maps: dict,
                 U_r=None, theta: UEmbedding | None = None, gamma: float | None = None):
        if objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
        for role in _NEEDS[objective]:
            if role not in maps:
                raise ValueError(f"objective {objective} needs a {role} map")
        self.op, self.M, self.objective, self.maps = op, M, objective, maps
        self.gamma = gamma
        if objective in ("galerkin", "sketched") and gamma is None:
            raise ValueError(f"objective {objective} needs gamma")
        if objective != "multi":
            if U_r is None:
                raise ValueError(f"objective {objective} needs a reduced basis")
            U_r = as_dense(U_r)
        self.U_r = U_r
        self.theta = theta
        if objective.startswith("galerkin"):
            dev = np.linalg.norm(U_r.T @ M.apply_R(U_r) - np.eye(U_r.shape[1]))
            if dev > ORTHO_TOL:
                raise NotOrthonormalError(f"reduced basis is not U-orthonormal (deviation {dev:.3e})")
            self.RU = M.apply_R(U_r)
        elif objective.startswith("sketched"):
            if theta is None:
                raise ValueError(f"objective {objective} needs Theta")
            self.UrT = theta.apply(U_r)
            dev = np.linalg.norm(self.UrT.T @ self.UrT - np.eye(U_r.shape[1]))
            if dev > ORTHO_TOL:
                raise NotThetaOrthonormalError(f"reduced basis is not Theta-orthonormal (deviation {dev:.3e})")
            self.G = theta.apply_transpose(self.UrT)

    def _parts(self):
        o = self.objective
        if o in ("galerkin", "sketched"):
            return (o + "_ur", math.sqrt(self.gamma)), (o + "_rr", 1.0)
        return ((o, 1.0),)

    def _h_part(self, part):
        M, mp = self.M, self.maps
        if part == "multi":
            return apply_psi(mp["psi"], M.solve)
        if part == "galerkin_rr":
            return apply_lambda(mp["lambda"], self.U_r.T @ self.RU)
        if part == "galerkin_ur":
            return apply_xi(mp["xi"], self.U_r)
        if part == "sketched_rr":
            return apply_lambda(mp["lambda"], self.UrT.T @ self.UrT)
        return apply_xi(mp["xi"], M.solve(self.G))

    def _col_part(self, part, Y: FactorizedInverse, Aj):
        M, mp = self.M, self.maps
        if part == "multi":
            return apply_psi(mp["psi"], lambda Z: Y.solve(np.asarray(Aj @ M.solve(Z))))
        if part == "galerkin_rr":
            return apply_lambda(mp["lambda"], self.RU.T @ Y.solve(np.asarray(Aj @ self.U_r)))
        if part == "galerkin_ur":
            return apply_xi(mp["xi"], M.solve(np.asarray(Aj.T @ Y.adjoint_solve(self.RU))))
        if part == "sketched_rr":
            return apply_lambda(mp["lambda"], self.UrT.T @ self.theta.apply(Y.solve(np.asarray(Aj @ self.U_r))))
        return apply_xi(mp["xi"], M.solve(np.asarray(Aj.T @ Y.adjoint_solve(self.G))))

    def h(self) -> np.ndarray:
        return np.concatenate([w * self._h_part(part) for part, w in self._parts()])

    def columns(self, Y: FactorizedInverse) -> np.ndarray:
        """(k, m_A) block of columns w_{i, j} for one basis element."""
        cols = [
            np.concatenate([w * self._col_part(part, Y, Aj) for part, w in self._parts()])
            for Aj in self.op.matrices
        ]
        return np.stack(cols, axis=1)

    def descriptors(self) -> dict:
        d = {role: m.to_dict() for role, m in self.maps.items()}
        d["gamma"] = self.gamma
        return d

    def system(self, h, cols: list) -> IndicatorSystem:
        terms = np.stack(cols, axis=1) if cols else np.zeros((h.shape[0], 0, self.op.m))
        return IndicatorSystem(self.objective, terms, h, self.op.coefficients, self.descriptors())


def assemble_system(basis: PreconditionerBasis, op: AffineOperator, M: MetricSpace, objective: str,
                    maps: dict, U_r=None, theta: UEmbedding | None = None,
                    gamma: float | None = None) -> IndicatorSystem:
    asm = SystemAssembler(op, M, objective, maps, U_r=U_r, theta=theta, gamma=gamma)
    return asm.system(asm.h(), [asm.columns(Y) for Y in basis.factors])


def build_objective_maps(objective: str, M: MetricSpace, eps: float, delta_star: float, n_points: int,
                         p_max: int, r: int | None = None, seed: int = 0,
                         kinds=("psrht", "gaussian", "gaussian")) -> dict:
    """Sketch maps for an objective, sized for (eps, delta*/#P, p_max + 1).

    With two maps the failure budget is split evenly between them.
    """
    roles = _NEEDS[objective]
    delta = union_delta(delta_star, n_points) / len(roles)
    d = p_max + 1
    maps = {}
    for tag, role in enumerate(roles):
        sub = int(np.random.SeedSequence(seed, spawn_key=(100 + tag,)).generate_state(1, np.uint64)[0])
        if role == "psi":
            maps[role] = build_sketch_map("Psi", eps, delta, d, metric=M, kinds=kinds, seed=sub)
        elif role == "lambda":
            maps[role] = build_sketch_map("Lambda", eps, delta, d, shape=(r, r), kinds=kinds, seed=sub)
        else:
            maps[role] = build_sketch_map("Xi", eps, delta, d, shape=(M.n, r), metric=M, kinds=kinds, seed=sub)
    return maps


# greedy ---------------------------------------------------------------


class GreedyResult(NamedTuple):
    basis: PreconditionerBasis
    system: IndicatorSystem
    # largest residual over the grid before each enrichment, then the final one
    history: list
    indices: list


def _first_order(op, M, grid, rhs):
    if rhs is not None:
        score = [M.dual_norm(rhs.evaluate(mu)) for mu in grid]
    else:
        score = [float(np.sqrt(np.sum(op.assemble(mu).data ** 2))) for mu in grid]
    # stable sort keeps the lowest index first among ties
    return sorted(range(len(score)), key=lambda i: -score[i])


def greedy_select(op: AffineOperator, M: MetricSpace, grid: ParameterGrid, p_max: int, objective: str,
                  maps: dict, U_r=None, theta=None, gamma=None, rhs: AffineVector | None = None,
                  tol: float = 1e-2) -> GreedyResult:
    """Greedy choice of interpolation points maximizing the sketched indicator.

    The first point maximizes ||b(mu)||_U' when ``rhs`` is given and the
    Frobenius norm of A(mu) otherwise. Candidates whose operator cannot be
    factorized are recorded in ``basis.rejected`` and skipped.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    asm = SystemAssembler(op, M, objective, maps, U_r=U_r, theta=theta, gamma=gamma)
    h = asm.h()
    basis = PreconditionerBasis()
    cols, history, indices = [], [], []
    excluded = set()

    def admit(i):
        fac, why = _try_factorize(op, grid[i])
        if fac is None:
            basis.rejected.append((np.atleast_1d(grid[i]), why))
            excluded.add(i)
            return False
        basis.append(grid[i], fac)
        cols.append(asm.columns(fac))
        indices.append(i)
        return True

    for i in _first_order(op, M, grid, rhs):
        if admit(i):
            break
    if basis.p == 0:
        raise SingularError("every candidate operator is singular")

    while True:
        sys = asm.system(h, cols)
        res = np.array([solve_coefficients(sys, mu)[1] for mu in grid])
        res[list(excluded)] = -np.inf
        history.append(float(res.max()))
        if basis.p >= p_max or res.max() < tol:
            break
        picked = False
        for i in np.argsort(-res, kind="stable"):
            if not np.isfinite(res[i]):
                break
            if admit(int(i)):
                picked = True
                break
        if not picked:
            break
    if basis.rejected:
        log.warning("greedy skipped %d singular candidates", len(basis.rejected))
    return GreedyResult(basis, sys, history, indices)


# persistence ----------------------------------------------------------


def save_system(sys: IndicatorSystem, directory, points=None) -> Path:
    """Write ``precond.json`` plus raw term blocks; online needs nothing else."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_block(directory / "precond_terms", sys.terms)
    write_block(directory / "precond_h", sys.h)
    meta = {
        "objective": sys.objective,
        "k": sys.k,
        "p": sys.p,
        "m_A": sys.terms.shape[2],
        "coefficients": [c.to_dict() for c in sys.coefficients],
        "descriptors": sys.descriptors,
        "points": [] if points is None else [np.atleast_1d(mu).tolist() for mu in points],
        "terms": "precond_terms.bin",
        "h": "precond_h.bin",
    }
    return write_json(directory / "precond.json", meta)


def load_system(directory) -> tuple[IndicatorSystem, list]:
    directory = Path(directory)
    meta = read_json(directory / "precond.json")
    sys = IndicatorSystem(
        meta["objective"],
        read_block(directory / meta["terms"]),
        read_block(directory / meta["h"]),
        tuple(coefficient_from_dict(c) for c in meta["coefficients"]),
        meta["descriptors"],
    )
    return sys, [np.asarray(mu) for mu in meta["points"]]
