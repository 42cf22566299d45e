"""Benchmark problem families and the on-disk problem bundle.

Families
--------
diffusion1d
    Finite differences for -(c u')' = 1 on (0, 1) with homogeneous Dirichlet
    conditions. The conductivity is 1 plus mu_j on inclusion j, so
    A(mu) = A_0 + sum_j mu_j A_j with mu_j in [0, contrast - 1]. R_U is the
    H^1-like matrix stiffness + mass.
diffusion2d
    The same on an N x N grid of the unit square (n = N^2), with vertical
    stripe inclusions.
synthetic-illcond
    R_U = I, A_0 a well-conditioned sparse perturbation of the identity and
    A_j = (contrast - 1) diag(w_j) + small sparse noise, mu in [0, 1]^(m_A-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .affine import AffineOperator, AffineVector, Constant, ParameterGrid, Power, coefficient_from_dict
from .errors import DimensionError, SingularError
from .io import read_block, read_json, read_mtx, write_block, write_json, write_mtx
from .linalg import lu_factorize

__all__ = ["FAMILIES", "Problem", "generate_problem", "read_bundle", "write_bundle"]

FAMILIES = ("diffusion1d", "diffusion2d", "synthetic-illcond")
MAX_RETRIES = 5
# parameter samples checked for nonsingularity (besides the box corners)
N_CHECK = 8


@dataclass(eq=False)
class Problem:
    op: AffineOperator
    rhs: AffineVector
    R: sp.csr_matrix
    lower: np.ndarray
    upper: np.ndarray
    grids: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.op.n


def _inclusions(x, nsub):
    """Indicator of inclusion j: x in [(2j + 0.5)/(2 nsub), (2j + 1.5)/(2 nsub))."""
    return [((x >= (2 * j + 0.5) / (2 * nsub)) & (x < (2 * j + 1.5) / (2 * nsub))).astype(float) for j in range(nsub)]


def _stiffness_1d(c, h):
    # c holds one conductivity per element, n + 1 elements for n interior nodes
    main = (c[:-1] + c[1:]) / h
    off = -c[1:-1] / h
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _diffusion1d(n, m_A, rng):
    h = 1.0 / (n + 1)
    xe = (np.arange(n + 1) + 0.5) * h
    A0 = _stiffness_1d(np.ones(n + 1), h)
    mats = [A0] + [_stiffness_1d(ch, h) for ch in _inclusions(xe, m_A - 1)]
    mass = sp.diags([np.full(n - 1, h / 6), np.full(n, 4 * h / 6), np.full(n - 1, h / 6)], [-1, 0, 1], format="csr")
    return mats, (A0 + mass).tocsr(), np.full(n, h)


def _incidence_2d(N):
    """Edge-node incidence on an N x N interior grid, boundary edges included.

    Returns the incidence matrix and the x-coordinate of each edge midpoint.
    """
    h = 1.0 / (N + 1)
    idx = np.arange(N * N).reshape(N, N)  # idx[iy, ix]
    rows, cols, vals, xm = [], [], [], []
    e = 0
    for iy in range(N):
        for ix in range(N + 1):  # horizontal edges
            if ix > 0:
                rows.append(e); cols.append(idx[iy, ix - 1]); vals.append(-1.0)
            if ix < N:
                rows.append(e); cols.append(idx[iy, ix]); vals.append(1.0)
            xm.append(ix * h + 0.5 * h)
            e += 1
    for ix in range(N):
        for iy in range(N + 1):  # vertical edges
            if iy > 0:
                rows.append(e); cols.append(idx[iy - 1, ix]); vals.append(-1.0)
            if iy < N:
                rows.append(e); cols.append(idx[iy, ix]); vals.append(1.0)
            xm.append((ix + 1) * h)
            e += 1
    G = sp.csr_matrix((vals, (rows, cols)), shape=(e, N * N))
    return G, np.array(xm), h


def _diffusion2d(n, m_A, rng):
    N = math.isqrt(n)
    if N * N != n:
        raise DimensionError(f"diffusion2d needs a square number of unknowns, got {n}")
    G, xm, h = _incidence_2d(N)

    def stiff(c):
        return (G.T @ sp.diags(c) @ G).tocsr()

    A0 = stiff(np.ones(G.shape[0]))
    mats = [A0] + [stiff(ch) for ch in _inclusions(xm, m_A - 1)]
    R = (A0 + h * h * sp.identity(n, format="csr")).tocsr()
    return mats, R, np.full(n, h * h)


def _normalized_noise(n, rng, density):
    S = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal, format="csr")
    bound = math.sqrt(abs(S).sum(axis=0).max() * abs(S).sum(axis=1).max()) if S.nnz else 1.0
    return S / bound


def _synthetic(n, m_A, contrast, rng):
    density = min(1.0, 5.0 / n)
    A0 = (sp.identity(n, format="csr") + 0.1 * _normalized_noise(n, rng, density)).tocsr()
    mats = [A0]
    for _ in range(m_A - 1):
        w = rng.uniform(0.0, 1.0, n)
        mats.append((sp.diags((contrast - 1.0) * w) + 0.05 * _normalized_noise(n, rng, density)).tocsr())
    return mats, sp.identity(n, format="csr"), np.ones(n) / math.sqrt(n)


def _check_nonsingular(op, lower, upper, rng):
    corners = [lower, upper]
    samples = [lower + rng.random(lower.size) * (upper - lower) for _ in range(N_CHECK)]
    for mu in corners + samples:
        lu_factorize(op.assemble(mu))


def generate_problem(family: str, n: int, m_A: int = 3, contrast: float = 100.0, seed: int = 0,
                     n_train: int = 100, n_test: int = 50) -> Problem:
    """Build a problem; regenerate with a new seed (at most 5 times) if a sampled A(mu) is singular."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if m_A < 1 or n < 2:
        raise ValueError("need m_A >= 1 and n >= 2")
    if contrast < 1.0:
        raise ValueError("contrast must be >= 1")
    last = None
    for attempt in range(MAX_RETRIES + 1):
        rng = np.random.default_rng([seed, attempt])
        if family == "diffusion1d":
            mats, R, b = _diffusion1d(n, m_A, rng)
            upper = np.full(m_A - 1, contrast - 1.0)
        elif family == "diffusion2d":
            mats, R, b = _diffusion2d(n, m_A, rng)
            upper = np.full(m_A - 1, contrast - 1.0)
        else:
            mats, R, b = _synthetic(n, m_A, contrast, rng)
            upper = np.ones(m_A - 1)
        lower = np.zeros(m_A - 1)
        coeffs = [Constant(1.0)] + [Power(j) for j in range(m_A - 1)]
        op = AffineOperator(mats, coeffs)
        try:
            _check_nonsingular(op, lower, upper, rng)
        except SingularError as exc:
            last = exc
            continue
        grid_rng = np.random.default_rng([seed, attempt, 1])
        grids = {}
        if m_A > 1:
            grids["training"] = ParameterGrid.sample(lower, upper, n_train, grid_rng, role="training")
            grids["test"] = ParameterGrid.sample(lower, upper, n_test, grid_rng, role="test")
        else:
            grids["training"] = ParameterGrid(np.zeros((1, 1)), role="training")
            grids["test"] = ParameterGrid(np.zeros((1, 1)), role="test")
            lower, upper = np.zeros(1), np.zeros(1)
        meta = {"family": family, "n": n, "m_A": m_A, "contrast": contrast, "seed": seed, "attempt": attempt}
        return Problem(op, AffineVector([b], [Constant(1.0)]), sp.csr_matrix(R), lower, upper, grids, meta)
    raise SingularError(f"no nonsingular {family} problem after {MAX_RETRIES} retries: {last}")


def write_bundle(problem: Problem, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for j, A in enumerate(problem.op.matrices):
        names.append(write_mtx(directory / f"A_{j}", A).name)
    write_mtx(directory / "R_U", problem.R)
    rhs_names = [write_block(directory / f"b_{l}", b).name for l, b in enumerate(problem.rhs.vectors)]
    meta = dict(problem.meta)
    meta.update(
        n=problem.n,
        m_A=problem.op.m,
        coefficients=[c.to_dict() for c in problem.op.coefficients],
        rhs_coefficients=[c.to_dict() for c in problem.rhs.coefficients],
        box={"lower": problem.lower.tolist(), "upper": problem.upper.tolist()},
        grids={role: g.points.tolist() for role, g in problem.grids.items()},
        operators=names,
        rhs=rhs_names,
        metric="R_U.mtx",
    )
    return write_json(directory / "problem.json", meta)


def read_bundle(directory) -> Problem:
    directory = Path(directory)
    meta = read_json(directory / "problem.json")
    mats = [read_mtx(directory / name) for name in meta["operators"]]
    op = AffineOperator(mats, [coefficient_from_dict(c) for c in meta["coefficients"]])
    rhs = AffineVector([read_block(directory / name) for name in meta["rhs"]],
                       [coefficient_from_dict(c) for c in meta["rhs_coefficients"]])
    lower = np.asarray(meta["box"]["lower"], dtype=float)
    upper = np.asarray(meta["box"]["upper"], dtype=float)
    grids = {role: ParameterGrid(np.asarray(pts), role=role, lower=lower, upper=upper) for role, pts in meta["grids"].items()}
    keep = {k: meta[k] for k in ("family", "n", "m_A", "contrast", "seed", "attempt") if k in meta}
    return Problem(op, rhs, read_mtx(directory / meta["metric"]), lower, upper, grids, keep)
