"""Affine parameter-dependent operators A(mu) = sum_j phi_j(mu) A_j.

Coefficient functions come from a small closed set of expressions that
round-trip through JSON (see :func:`coefficient_from_dict`), so a problem
description never contains executable code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError
from .linalg import lu_factorize

__all__ = [
    "AffineOperator",
    "AffineVector",
    "Constant",
    "ParameterGrid",
    "Power",
    "Rational",
    "Trig",
    "assemble_operator",
    "coefficient_from_dict",
    "solve_full",
]


GRID_ROLES = ("training", "test", "interpolation")


def _mu(mu) -> np.ndarray:
    return np.atleast_1d(np.asarray(mu, dtype=float))


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, mu) -> float:
        return float(self.value)

    def to_dict(self) -> dict:
        return {"type": "const", "value": self.value}


@dataclass(frozen=True)
class Power:
    """scale * mu[index] ** exponent"""

    index: int
    exponent: float = 1.0
    scale: float = 1.0

    def __call__(self, mu) -> float:
        return float(self.scale * _mu(mu)[self.index] ** self.exponent)

    def to_dict(self) -> dict:
        return {"type": "power", "index": self.index, "exponent": self.exponent, "scale": self.scale}


@dataclass(frozen=True)
class Trig:
    """scale * func(freq * mu[index] + phase) with func in {sin, cos}"""

    index: int
    func: str = "sin"
    freq: float = 1.0
    phase: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.func not in ("sin", "cos"):
            raise ValueError(f"unsupported trigonometric function {self.func!r}")

    def __call__(self, mu) -> float:
        f = math.sin if self.func == "sin" else math.cos
        return float(self.scale * f(self.freq * _mu(mu)[self.index] + self.phase))

    def to_dict(self) -> dict:
        return {
            "type": "trig",
            "index": self.index,
            "func": self.func,
            "freq": self.freq,
            "phase": self.phase,
            "scale": self.scale,
        }


@dataclass(frozen=True)
class Rational:
    """(num[0] + num[1:] . mu) / (den[0] + den[1:] . mu)"""

    num: tuple
    den: tuple

    def __call__(self, mu) -> float:
        mu = _mu(mu)

        def affine(c):
            c = np.asarray(c, dtype=float)
            return c[0] + float(np.dot(c[1:], mu[: c.size - 1]))

        d = affine(self.den)
        if d == 0.0:
            raise ZeroDivisionError(f"rational coefficient has zero denominator at mu={mu.tolist()}")
        return affine(self.num) / d

    def to_dict(self) -> dict:
        return {"type": "rational", "num": list(self.num), "den": list(self.den)}


_COEFF_TYPES = {"const": Constant, "power": Power, "trig": Trig, "rational": Rational}


def coefficient_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind not in _COEFF_TYPES:
        raise ValueError(f"unknown coefficient type {kind!r}")
    if kind == "rational":
        return Rational(tuple(d["num"]), tuple(d["den"]))
    return _COEFF_TYPES[kind](**d)


class AffineOperator:
    """Sparse affine operator with a cached union sparsity pattern.

    The terms are stored as one sparse (nnz x m_A) matrix mapping the
    coefficient vector phi(mu) to the data array of the assembled CSR
    matrix, so assembly is a single sparse mat-vec.
    """

    def __init__(self, matrices: Sequence, coefficients: Sequence):
        if len(matrices) == 0:
            raise ValueError("an affine operator needs at least one term")
        if len(matrices) != len(coefficients):
            raise ValueError("one coefficient function per matrix is required")
        mats = []
        for A in matrices:
            A = sp.csr_matrix(A, dtype=float)
            A.sum_duplicates()
            A.sort_indices()
            mats.append(A)
        shape = mats[0].shape
        if shape[0] != shape[1] or any(A.shape != shape for A in mats):
            raise DimensionError("all affine terms must share one square shape")
        self.matrices = tuple(mats)
        self.coefficients = tuple(coefficients)
        n = shape[0]

        pattern = sp.csr_matrix(shape)
        for A in mats:
            pattern = pattern + sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=shape)
        pattern.sort_indices()
        self._indptr = pattern.indptr.copy()
        self._indices = pattern.indices.copy()
        keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(self._indptr)) * n + self._indices
        rows, cols, vals = [], [], []
        for j, A in enumerate(mats):
            akeys = np.repeat(np.arange(n, dtype=np.int64), np.diff(A.indptr)) * n + A.indices
            rows.append(np.searchsorted(keys, akeys))
            cols.append(np.full(A.nnz, j))
            vals.append(A.data)
        self._terms = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(keys.size, len(mats)),
        )

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.matrices)

    def phi(self, mu) -> np.ndarray:
        return np.array([f(mu) for f in self.coefficients], dtype=float)

    def assemble_phi(self, phi) -> sp.csr_matrix:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.m,):
            raise DimensionError(f"expected {self.m} coefficients, got shape {phi.shape}")
        data = self._terms @ phi
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def assemble(self, mu) -> sp.csr_matrix:
        return self.assemble_phi(self.phi(mu))


class AffineVector:
    """Affine right-hand side b(mu) = sum_j psi_j(mu) b_j."""

    def __init__(self, vectors: Sequence, coefficients: Sequence):
        if len(vectors) == 0 or len(vectors) != len(coefficients):
            raise ValueError("need at least one vector and one coefficient per vector")
        self.vectors = np.array([np.asarray(v, dtype=float) for v in vectors])
        if self.vectors.ndim != 2:
            raise DimensionError("all right-hand-side terms must share one length")
        self.coefficients = tuple(coefficients)

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    def phi(self, mu) -> np.ndarray:
        return np.array([f(mu) for f in self.coefficients], dtype=float)

    def evaluate(self, mu) -> np.ndarray:
        return self.phi(mu) @ self.vectors


@dataclass
class ParameterGrid:
    """Finite parameter set inside a box, tagged with its role."""

    points: np.ndarray
    role: str = "training"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.size == 0:
            raise ValueError("parameter grid is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("parameter grid contains non-finite values")
        if self.role not in GRID_ROLES:
            raise ValueError(f"unknown grid role {self.role!r}")
        self.points = pts
        if self.lower is not None:
            self.lower = np.asarray(self.lower, dtype=float)
            self.upper = np.asarray(self.upper, dtype=float)
            if np.any(pts < self.lower) or np.any(pts > self.upper):
                raise ValueError("grid points fall outside the parameter box")

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @classmethod
    def sample(cls, lower, upper, size, rng, role="training", log=False):
        """Uniform (or log-uniform on [lower+1, upper+1]) samples in the box."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        u = rng.random((size, lower.size))
        if log:
            lo, hi = np.log(lower + 1.0), np.log(upper + 1.0)
            pts = np.exp(lo + u * (hi - lo)) - 1.0
            pts = np.clip(pts, lower, upper)
        else:
            pts = lower + u * (upper - lower)
        return cls(pts, role=role, lower=lower, upper=upper)


def assemble_operator(op: AffineOperator, mu) -> sp.csr_matrix:
    return op.assemble(mu)


def solve_full(op: AffineOperator, rhs, mu) -> np.ndarray:
    """Full-order solution u(mu) of A(mu) u = b(mu)."""
    b = rhs.evaluate(mu) if isinstance(rhs, AffineVector) else np.asarray(rhs, dtype=float)
    return lu_factorize(op.assemble(mu)).solve(b)
