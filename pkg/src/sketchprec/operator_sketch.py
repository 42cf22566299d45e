"""Oblivious embeddings of matrix spaces built from three vector sketches.

For a matrix X with q rows and p columns the three maps are

    Lambda(X) = Gamma vec(Omega X Sigma^T)            HS(l2, l2) -> l2
    Xi(X)     = Gamma vec(Omega Q X Sigma^T)          HS(l2, U)  -> l2
    Psi(X)    = Gamma vec(Omega Q X Q^T Sigma^T)      HS(U', U)  -> l2

``vec`` is column-major, so it is an isometry between the Frobenius norm and
the l2 norm. Omega or Sigma may be identities; Gamma then acts on the
k_Omega * k_Sigma entries of the intermediate block.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimensionError
from .linalg import MetricSpace, as_dense
from .sketching import KINDS, SketchingMatrix, min_rows

__all__ = [
    "MODES",
    "ComposedAccuracy",
    "OperatorSketchMap",
    "apply_lambda",
    "apply_psi",
    "apply_xi",
    "build_sketch_map",
    "composed_accuracy",
    "derive_seed",
    "map_accuracy",
    "vec_op",
]

MODES = ("Lambda", "Xi", "Psi")

_GAMMA, _OMEGA, _SIGMA = 0, 1, 2


def vec_op(M) -> np.ndarray:
    """Column-major flattening."""
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def derive_seed(seed: int, *tags: int) -> int:
    """Independent 64-bit child seed for a labelled sub-stream."""
    ss = np.random.SeedSequence(seed, spawn_key=tags)
    return int(ss.generate_state(1, np.uint64)[0])


class ComposedAccuracy(NamedTuple):
    eps: float
    delta: float
    # the two candidates inside the min, before adding delta_gamma
    sigma_first: float
    omega_first: float


def composed_accuracy(eps_gamma, eps_omega, eps_sigma, delta_gamma, delta_omega, delta_sigma,
                      k_omega, k_sigma, dims) -> ComposedAccuracy:
    """Accuracy of Gamma vec(Omega X Sigma^T) on matrices of shape ``dims = (q, p)``.

    Sketching rows first makes Sigma embed q row vectors and Omega the
    k_Sigma columns of the result; sketching columns first swaps the roles.
    Use (r, r) for Lambda, (s, r) for Xi and (s, s) for Psi.
    """
    q, p = dims
    eps = (1.0 + eps_gamma) * (1.0 + eps_sigma) * (1.0 + eps_omega) - 1.0
    sigma_first = k_sigma * delta_omega + q * delta_sigma
    omega_first = k_omega * delta_sigma + p * delta_omega
    return ComposedAccuracy(eps, min(sigma_first, omega_first) + delta_gamma, sigma_first, omega_first)


@dataclass(frozen=True, eq=False)
class OperatorSketchMap:
    """One of Lambda, Xi or Psi, fixed by its three constituent sketches.

    ``eps``, ``delta`` and ``d`` record the design target the map was sized
    for (None when the constituents were chosen by hand).
    """

    mode: str
    gamma: SketchingMatrix
    omega: SketchingMatrix
    sigma: SketchingMatrix
    metric: MetricSpace | None = None
    eps: float | None = None
    delta: float | None = None
    d: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.gamma.n != self.omega.k * self.sigma.k:
            raise DimensionError(
                f"Gamma has {self.gamma.n} columns, expected k_Omega*k_Sigma = {self.omega.k * self.sigma.k}"
            )
        if self.mode != "Lambda":
            if self.metric is None:
                raise ValueError(f"mode {self.mode} needs a metric")
            if self.omega.n != self.metric.s:
                raise DimensionError(f"Omega has {self.omega.n} columns, Q has {self.metric.s} rows")
            if self.mode == "Psi" and self.sigma.n != self.metric.s:
                raise DimensionError(f"Sigma has {self.sigma.n} columns, Q has {self.metric.s} rows")

    @property
    def k(self) -> int:
        return self.gamma.k

    @property
    def input_shape(self) -> tuple[int, int]:
        if self.mode == "Lambda":
            return self.omega.n, self.sigma.n
        n = self.metric.n
        return (n, self.sigma.n) if self.mode == "Xi" else (n, n)

    @property
    def dims(self) -> tuple[int, int]:
        """(q, p) entering the failure-probability formula."""
        if self.mode == "Lambda":
            return self.omega.n, self.sigma.n
        return (self.metric.s, self.sigma.n) if self.mode == "Xi" else (self.metric.s, self.metric.s)

    def _finish(self, left: np.ndarray) -> np.ndarray:
        # left = Omega-side block before Sigma, shape (k_Omega, p)
        mid = self.sigma.apply(left.T).T
        return self.gamma.apply(vec_op(mid))

    def apply(self, X) -> np.ndarray:
        if self.mode == "Lambda":
            return apply_lambda(self, X)
        if self.mode == "Xi":
            return apply_xi(self, X)
        return apply_psi(self, X)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "gamma": self.gamma.to_dict(),
            "omega": self.omega.to_dict(),
            "sigma": self.sigma.to_dict(),
            "eps": self.eps,
            "delta": self.delta,
            "d": self.d,
        }

    @classmethod
    def from_dict(cls, d: dict, metric: MetricSpace | None = None) -> "OperatorSketchMap":
        return cls(
            d["mode"],
            SketchingMatrix.from_dict(d["gamma"]),
            SketchingMatrix.from_dict(d["omega"]),
            SketchingMatrix.from_dict(d["sigma"]),
            metric=metric,
            eps=d.get("eps"),
            delta=d.get("delta"),
            d=d.get("d"),
        )


def _check(m: OperatorSketchMap, mode: str, X: np.ndarray):
    if m.mode != mode:
        raise ValueError(f"map has mode {m.mode}, not {mode}")
    if X.ndim != 2 or X.shape != m.input_shape:
        raise DimensionError(f"{mode} expects a {m.input_shape} matrix, got {X.shape}")


def apply_lambda(m: OperatorSketchMap, X) -> np.ndarray:
    """Gamma vec(Omega X Sigma^T)."""
    X = as_dense(X)
    _check(m, "Lambda", X)
    return m._finish(m.omega.apply(X))


def apply_xi(m: OperatorSketchMap, X) -> np.ndarray:
    """Gamma vec(Omega Q X Sigma^T)."""
    X = as_dense(X)
    _check(m, "Xi", X)
    return m._finish(m.omega.apply(m.metric.apply_Q(X)))


def apply_psi(m: OperatorSketchMap, X_action: Callable | np.ndarray) -> np.ndarray:
    """Gamma vec(Omega Q X Q^T Sigma^T) with X available only as an action.

    ``X_action`` maps an n x c block Y to X Y. The product is formed right
    to left, so X is applied to exactly k_Sigma columns.
    """
    if m.mode != "Psi":
        raise ValueError(f"map has mode {m.mode}, not Psi")
    if not callable(X_action):
        Xd = as_dense(X_action)
        _check(m, "Psi", Xd)
        X_action = Xd.__matmul__
    M = m.metric
    # Q^T Sigma^T = (Sigma Q)^T
    Z = m.sigma.apply(M.Q).T
    XZ = np.asarray(X_action(Z), dtype=float)
    if XZ.shape != Z.shape:
        raise DimensionError(f"operator action returned shape {XZ.shape}, expected {Z.shape}")
    mid = m.omega.apply(M.apply_Q(XZ))
    return m.gamma.apply(vec_op(mid))


def _split_eps(eps: float, parts: int) -> float:
    return (1.0 + eps) ** (1.0 / parts) - 1.0 if parts else 0.0


def build_sketch_map(mode: str, eps: float, delta: float, d: int, *, shape=None,
                     metric: MetricSpace | None = None, kinds=("gaussian", "gaussian", "gaussian"),
                     seed: int = 0) -> OperatorSketchMap:
    """Size Gamma, Omega and Sigma so the composed map is an (eps, delta, d) embedding.

    Parameters
    ----------
    mode : {"Lambda", "Xi", "Psi"}
    shape : (q, p)
        Input matrix shape for Lambda; number of columns p for Xi may be given
        as ``shape=(n, p)``. Ignored for Psi.
    kinds : triple of sketch kinds for (Gamma, Omega, Sigma).

    Notes
    -----
    The accuracy budget is split exactly, (1 + eps)^(1/m) - 1 for each of the
    m random constituents. A constituent whose required size reaches its input
    dimension is replaced by the identity, as is Sigma (and Omega for Lambda)
    when d >= p/4. The budget is then re-split among the remaining ones.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    if any(k not in KINDS for k in kinds):
        raise ValueError(f"unknown sketch kind in {kinds}")
    if mode == "Lambda":
        q, p = shape
        n_omega, n_sigma = q, p
    else:
        if metric is None:
            raise ValueError(f"mode {mode} needs a metric")
        s = metric.s
        p = shape[1] if mode == "Xi" else s
        q = s
        n_omega, n_sigma = s, p

    random = {c for c, kind in zip((_GAMMA, _OMEGA, _SIGMA), kinds) if kind != "identity"}
    if 4 * d >= p:
        random.discard(_SIGMA)
    if mode == "Lambda" and 4 * d >= q:
        random.discard(_OMEGA)

    while True:
        eps_i = _split_eps(eps, len(random))
        has_o, has_s = _OMEGA in random, _SIGMA in random
        if has_o and has_s:
            d_gamma = delta / 3.0
            d_sigma = delta / (3.0 * q)
        elif has_o or has_s:
            d_gamma = delta / 2.0 if _GAMMA in random else 0.0
            share = delta - d_gamma
            d_sigma = share / q if has_s else 0.0
        else:
            d_gamma, d_sigma = delta, 0.0
        k_sigma = min_rows(kinds[_SIGMA], eps_i, d_sigma, d, n_sigma) if has_s else n_sigma
        if has_s and k_sigma >= n_sigma:
            random.discard(_SIGMA)
            continue
        if has_o:
            d_omega = delta / (3.0 * k_sigma) if has_s else (delta - d_gamma) / p
            k_omega = min_rows(kinds[_OMEGA], eps_i, d_omega, d, n_omega)
            if k_omega >= n_omega:
                random.discard(_OMEGA)
                continue
        else:
            d_omega, k_omega = 0.0, n_omega
        n_gamma = k_omega * k_sigma
        if _GAMMA in random:
            k_gamma = min_rows(kinds[_GAMMA], eps_i, d_gamma, d, n_gamma)
            if k_gamma >= n_gamma:
                random.discard(_GAMMA)
                continue
        break

    def make(c, k, n):
        if c in random:
            return SketchingMatrix(kinds[c], k, n, derive_seed(seed, c))
        return SketchingMatrix.identity(n)

    sigma = make(_SIGMA, k_sigma, n_sigma)
    omega = make(_OMEGA, k_omega, n_omega)
    gamma = make(_GAMMA, k_gamma if _GAMMA in random else n_gamma, n_gamma)
    m = OperatorSketchMap(mode, gamma, omega, sigma, metric=None if mode == "Lambda" else metric,
                          eps=eps, delta=delta, d=d)
    acc = map_accuracy(m, eps_i, (d_gamma, d_omega, d_sigma))
    if acc.eps > eps * (1 + 1e-12) or acc.delta > delta * (1 + 1e-12):
        raise AssertionError(f"sizing produced ({acc.eps}, {acc.delta}) above target ({eps}, {delta})")
    return m


def map_accuracy(m: OperatorSketchMap, eps_each: float, deltas) -> ComposedAccuracy:
    """Composed accuracy with identity constituents counted as exact."""
    parts = (m.gamma, m.omega, m.sigma)
    e = [0.0 if c.is_identity else eps_each for c in parts]
    dl = [0.0 if c.is_identity else dv for c, dv in zip(parts, deltas)]
    return composed_accuracy(e[0], e[1], e[2], dl[0], dl[1], dl[2], m.omega.k, m.sigma.k, m.dims)
