"""Oblivious l2 -> l2 subspace embeddings and their U -> l2 composition.

Two random distributions are provided, plus an identity placeholder that
lets composed operator sketches skip a stage:

* ``gaussian``: i.i.d. N(0, 1/k) entries. Columns are generated in blocks
  from a counter-based stream keyed by (seed, block index), so the matrix is
  never stored and every block can be regenerated independently.
* ``psrht``: partial subsampled randomized Hadamard transform
  k^{-1/2} R H D restricted to the first n columns of a size-s transform,
  where s is the next power of two, H the unnormalized Walsh-Hadamard
  matrix, D random signs and R a random row subset drawn without
  replacement. With H unnormalized this scaling gives E||Ox||^2 = ||x||^2.
* ``identity``: k = n, exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import DimensionError, NotPowerOfTwoError
from .linalg import MetricSpace

__all__ = [
    "KINDS",
    "SketchingMatrix",
    "UEmbedding",
    "apply_sketch",
    "fwht",
    "gaussian_min_rows",
    "min_rows",
    "next_pow2",
    "split_budget",
    "srht_min_rows",
    "u_embed",
    "union_delta",
]

KINDS = ("gaussian", "psrht", "identity")

# Gaussian columns per generated block.
GAUSS_BLOCK = 512
_SIGNS_STREAM = 1
_ROWS_STREAM = 2
# index bits handled per dense Hadamard block in fwht
FWHT_RADIX_BITS = 4


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


@lru_cache(maxsize=None)
def _hadamard_block(bits: int) -> np.ndarray:
    H = np.ones((1, 1))
    for _ in range(bits):
        H = np.kron(np.array([[1.0, 1.0], [1.0, -1.0]]), H)
    H.flags.writeable = False
    return H


def fwht(v) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along the first axis.

    Equals ``H @ v`` with H the Sylvester-ordered Hadamard matrix of order
    len(v); O(s log s) per column. The transform factors as a Kronecker
    product, so the index bits are processed in groups of at most
    ``FWHT_RADIX_BITS``, each group one batched matmul with a small dense
    Hadamard block. Returns a new array.
    """
    x = np.array(v, dtype=float, copy=True)
    s = x.shape[0]
    if s == 0 or s & (s - 1):
        raise NotPowerOfTwoError(f"length {s} is not a power of two")
    shape = x.shape
    x = x.reshape(s, -1)
    c = x.shape[1]
    bits = s.bit_length() - 1
    groups = max(1, -(-bits // FWHT_RADIX_BITS))
    inner = 1
    for g in range(groups):
        a = bits // groups + (g < bits % groups)
        b = 1 << a
        x = np.matmul(_hadamard_block(a), x.reshape(s // (b * inner), b, inner * c))
        inner *= b
    return x.reshape(shape)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass(frozen=True)
class SketchingMatrix:
    """Seeded k x n sketching matrix; (kind, k, n, seed) determine it exactly."""

    kind: str
    k: int
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}; expected one of {KINDS}")
        if self.k < 1 or self.n < 1:
            raise ValueError(f"sketch dimensions must be positive, got k={self.k}, n={self.n}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.kind == "identity" and self.k != self.n:
            raise ValueError("identity sketch requires k == n")
        if self.kind == "psrht" and self.k > self.s:
            raise ValueError(f"P-SRHT cannot keep {self.k} rows out of {self.s}")

    @classmethod
    def identity(cls, n: int) -> "SketchingMatrix":
        return cls("identity", n, n, 0)

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    @property
    def s(self) -> int:
        return next_pow2(self.n)

    @cached_property
    def signs(self) -> np.ndarray:
        return _stream(self.seed, _SIGNS_STREAM).choice(np.array([-1.0, 1.0]), size=self.s)

    @cached_property
    def rows(self) -> np.ndarray:
        return _stream(self.seed, _ROWS_STREAM).permutation(self.s)[: self.k]

    def _gaussian_block(self, b: int) -> np.ndarray:
        width = min(GAUSS_BLOCK, self.n - b * GAUSS_BLOCK)
        g = _stream(self.seed, 0, b).standard_normal((self.k, width))
        return g / math.sqrt(self.k)

    def apply(self, X) -> np.ndarray:
        """Return the sketch of a vector or of the columns of a matrix."""
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n:
            raise DimensionError(f"sketch expects {self.n} rows, got {X.shape[0]}")
        vec = X.ndim == 1
        X2 = X.reshape(self.n, -1)
        if self.kind == "identity":
            out = X2.copy()
        elif self.kind == "gaussian":
            out = np.zeros((self.k, X2.shape[1]))
            for b in range(-(-self.n // GAUSS_BLOCK)):
                sl = slice(b * GAUSS_BLOCK, min((b + 1) * GAUSS_BLOCK, self.n))
                out += self._gaussian_block(b) @ X2[sl]
        else:
            Y = np.zeros((self.s, X2.shape[1]))
            Y[: self.n] = X2 * self.signs[: self.n, None]
            out = fwht(Y)[self.rows] / math.sqrt(self.k)
        return out[:, 0] if vec else out

    def apply_transpose(self, Y) -> np.ndarray:
        """Return Omega^T Y for a vector or a k-row block."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != self.k:
            raise DimensionError(f"transpose sketch expects {self.k} rows, got {Y.shape[0]}")
        vec = Y.ndim == 1
        Y2 = Y.reshape(self.k, -1)
        if self.kind == "identity":
            out = Y2.copy()
        elif self.kind == "gaussian":
            out = np.vstack([self._gaussian_block(b).T @ Y2 for b in range(-(-self.n // GAUSS_BLOCK))])
        else:
            Z = np.zeros((self.s, Y2.shape[1]))
            Z[self.rows] = Y2
            out = (fwht(Z)[: self.n] * self.signs[: self.n, None]) / math.sqrt(self.k)
        return out[:, 0] if vec else out

    def dense(self) -> np.ndarray:
        """Materialize the matrix (tests and small problems only)."""
        if self.kind == "gaussian":
            return np.hstack([self._gaussian_block(b) for b in range(-(-self.n // GAUSS_BLOCK))])
        return self.apply(np.eye(self.n))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, "n": self.n, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SketchingMatrix":
        return cls(d["kind"], int(d["k"]), int(d["n"]), int(d["seed"]))


def apply_sketch(S: SketchingMatrix, X) -> np.ndarray:
    return S.apply(X)


@dataclass(frozen=True, eq=False)
class UEmbedding:
    """Theta = Omega Q, a U -> l2 embedding."""

    omega: SketchingMatrix
    metric: MetricSpace

    def __post_init__(self):
        if self.omega.n != self.metric.s:
            raise DimensionError(f"Omega has {self.omega.n} columns but Q has {self.metric.s} rows")

    @property
    def k(self) -> int:
        return self.omega.k

    @property
    def n(self) -> int:
        return self.metric.n

    def apply(self, X) -> np.ndarray:
        return self.omega.apply(self.metric.apply_Q(X))

    def apply_transpose(self, Y) -> np.ndarray:
        """Theta^T Y = Q^T Omega^T Y."""
        return self.metric.apply_Qt(self.omega.apply_transpose(Y))

    def dense(self) -> np.ndarray:
        return self.omega.dense() @ self.metric.Q


def u_embed(E: UEmbedding, X) -> np.ndarray:
    return E.apply(X)


def _check_eps_delta(eps, delta, d):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if d < 1:
        raise ValueError(f"subspace dimension must be >= 1, got {d}")


def gaussian_min_rows(eps: float, delta: float, d: int) -> int:
    """Rows making a rescaled Gaussian matrix an (eps, delta, d) real embedding."""
    _check_eps_delta(eps, delta, d)
    return math.ceil(7.87 * eps**-2 * (6.9 * d + math.log(1.0 / delta)))


def srht_min_rows(eps: float, delta: float, d: int, n: int) -> int:
    """Rows making a P-SRHT matrix with n columns an (eps, delta, d) embedding."""
    _check_eps_delta(eps, delta, d)
    lead = 2.0 / (eps**2 - eps**3 / 3.0)
    mid = (math.sqrt(d) + math.sqrt(8.0 * math.log(6.0 * n / delta))) ** 2
    return math.ceil(lead * mid * math.log(3.0 * d / delta))


def min_rows(kind: str, eps: float, delta: float, d: int, n: int) -> int:
    if kind == "gaussian":
        return gaussian_min_rows(eps, delta, d)
    if kind == "psrht":
        return srht_min_rows(eps, delta, d, n)
    raise ValueError(f"no size bound for sketch kind {kind!r}")


def split_budget(delta: float, parts: int) -> float:
    """Equal share of a failure probability among ``parts`` embeddings."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    return delta / parts


def union_delta(delta_star: float, n_points: int) -> float:
    """Per-point failure probability for a union bound over a finite set."""
    if n_points < 1:
        raise ValueError("the parameter set must be non-empty")
    return delta_star / n_points
