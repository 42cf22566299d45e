"""End-to-end offline/online runs and Monte-Carlo validation of embeddings.

Outputs are deterministic for a fixed configuration: floats are written with
17 significant digits, JSON keys are sorted and nothing depends on timing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .affine import solve_full
from .indicators import (
    ErrorMatrixAction,
    cond_bound,
    delta_galerkin_exact,
    delta_uu_exact,
    theta_orthonormalize,
)
from .io import read_block, read_json, write_block, write_json
from .linalg import MetricSpace, metric_factorize, singular_bounds
from .mor import (
    ReducedBasis,
    build_reduced_sketches,
    certify,
    galerkin_solve,
    load_reduced,
    project_u,
    save_reduced,
    sketched_galerkin_solve,
)
from .operator_sketch import build_sketch_map, derive_seed
from .preconditioner import (
    OBJECTIVES,
    build_basis,
    build_objective_maps,
    compress_online,
    default_gamma,
    greedy_select,
    load_system,
    online_sketch,
    save_system,
    solve_coefficients,
)
from .problems import Problem, read_bundle
from .sketching import KINDS, SketchingMatrix, UEmbedding, min_rows, union_delta

__all__ = [
    "ExperimentConfig",
    "PipelineResult",
    "make_theta",
    "pod_basis",
    "run_offline",
    "run_online",
    "run_pipeline",
    "validate_embeddings",
]

log = logging.getLogger(__name__)

EXACT_LIMIT = 2000
_THETA_TAG = 7


@dataclass
class ExperimentConfig:
    problem: str
    output: str
    objective: str = "multi"
    p_max: int = 4
    r: int = 4
    eps: float = 0.5
    delta: float = 0.1
    seed: int = 0
    gamma: float | None = None
    K_star: float = 1.5
    tol: float = 1e-2
    kinds: tuple = ("psrht", "gaussian", "gaussian")
    compress: bool = False

    def __post_init__(self):
        self.kinds = tuple(self.kinds)

    def validate(self):
        if not (Path(self.problem) / "problem.json").is_file():
            raise FileNotFoundError(f"no problem bundle at {self.problem}")
        for name in ("eps", "delta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.p_max < 1 or self.r < 1:
            raise ValueError("p_max and r must be >= 1")
        if len(self.kinds) != 3 or any(k not in KINDS for k in self.kinds):
            raise ValueError(f"kinds must be three of {KINDS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kinds"] = list(self.kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


@dataclass
class PipelineResult:
    status: dict
    csv_path: Path | None = None
    json_path: Path | None = None
    summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v == "ok" for v in self.status.values())


def pod_basis(problem: Problem, M: MetricSpace, r: int) -> np.ndarray:
    """U-orthonormal POD basis from full solutions at the first 2r training points."""
    pts = problem.grids["training"].points[: max(r, 2 * r)]
    S = np.column_stack([solve_full(problem.op, problem.rhs, mu) for mu in pts])
    Ul, s, _ = la.svd(M.apply_Q(S), full_matrices=False)
    r = min(r, int(np.sum(s > 1e-10 * s[0])))
    return M.solve_Q(Ul[:, :r])


def make_theta(M: MetricSpace, eps: float, delta: float, d: int, seed: int, kind: str = "gaussian") -> UEmbedding:
    """Theta = Omega Q sized for (eps, delta, d); Omega is the identity when no compression is possible."""
    k = min_rows(kind, eps, delta, d, M.s)
    if k >= M.s:
        return UEmbedding(SketchingMatrix.identity(M.s), M)
    return UEmbedding(SketchingMatrix(kind, k, M.s, derive_seed(seed, _THETA_TAG)), M)


def _setup(cfg: ExperimentConfig):
    problem = read_bundle(cfg.problem)
    M = metric_factorize(problem.R)
    n_test = len(problem.grids["test"])
    theta = make_theta(M, cfg.eps, union_delta(cfg.delta, n_test), cfg.r + 1, cfg.seed)
    return problem, M, theta


def run_offline(cfg: ExperimentConfig) -> dict:
    """Greedy basis, indicator system and reduced sketches, written to ``output/offline``."""
    problem, M, theta = _setup(cfg)
    out = Path(cfg.output) / "offline"
    out.mkdir(parents=True, exist_ok=True)
    U_r = pod_basis(problem, M, cfg.r)
    U_theta, _ = theta_orthonormalize(theta, U_r)
    basis_for_objective = U_theta if cfg.objective.startswith("sketched") else U_r
    gamma = cfg.gamma
    if cfg.objective in ("galerkin", "sketched") and gamma is None:
        gamma = default_gamma(basis_for_objective, M, cfg.K_star)
    train = problem.grids["training"]
    maps = build_objective_maps(cfg.objective, M, cfg.eps, cfg.delta, len(train), cfg.p_max,
                                r=U_r.shape[1], seed=cfg.seed, kinds=cfg.kinds)
    g = greedy_select(problem.op, M, train, cfg.p_max, cfg.objective, maps, U_r=basis_for_objective,
                      theta=theta, gamma=gamma, rhs=problem.rhs, tol=cfg.tol)
    save_system(g.system, out, points=g.basis.points)
    write_block(out / "U_r", U_r)
    rb = ReducedBasis(U_theta, M, flavor="Theta", theta=theta)
    save_reduced(build_reduced_sketches(rb, problem.op, problem.rhs, g.basis), out)
    info = {
        "selected_indices": g.indices,
        "selected_points": [p.tolist() for p in g.basis.points],
        "greedy_history": g.history,
        "rejected": [[p.tolist(), why] for p, why in g.basis.rejected],
        "gamma": gamma,
        "theta": theta.omega.to_dict(),
        "maps": {role: m.to_dict() for role, m in maps.items()},
        "r": int(U_r.shape[1]),
    }
    write_json(out / "offline.json", info)
    return info


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _kappa(M: MetricSpace, C) -> float:
    return singular_bounds(M, C).kappa


def run_online(cfg: ExperimentConfig) -> tuple[list, dict]:
    """Per-test-point sweep using the offline artifacts; returns (header + rows, medians)."""
    problem, M, theta = _setup(cfg)
    off = Path(cfg.output) / "offline"
    sys, points = load_system(off)
    if cfg.compress:
        sys = compress_online(sys, online_sketch(sys, len(problem.grids["test"]), cfg.delta, cfg.seed, cfg.eps))
    U_r = read_block(off / "U_r")
    basis = build_basis(problem.op, points)
    U_theta, _ = theta_orthonormalize(theta, U_r)
    rb = ReducedBasis(U_theta, M, flavor="Theta", theta=theta, sketches=load_reduced(off))
    exact = problem.n <= EXACT_LIMIT
    test = problem.grids["test"]
    l = test.points.shape[1]
    header = (["index"] + [f"mu_{i}" for i in range(l)] + [f"lambda_{i}" for i in range(basis.p)]
              + ["indicator_sketched", "delta_uu", "delta_urur", "delta_uur", "kappa_A", "kappa_B",
                 "cond_bound", "err_galerkin", "err_sketched_galerkin", "err_projection", "res_dual",
                 "cert_lo", "cert_hi", "cert_contains"])
    rows = [header]
    kA, kB, ind = [], [], []
    for t, mu in enumerate(test):
        lam, res = solve_coefficients(sys, mu)
        act = basis.action(lam)
        A = problem.op.assemble(mu)
        b = problem.rhs.evaluate(mu)
        u = solve_full(problem.op, problem.rhs, mu)

        def B_action(V, A=A, act=act):
            return M.apply_R(act.apply(np.asarray(A @ V)))

        f = M.apply_R(act.apply(b))
        ur = galerkin_solve(B_action, f, U_r).u_r
        urs = sketched_galerkin_solve(rb, mu, lam).u_r
        err = M.norm(u - ur)
        row = dict(indicator_sketched=res, err_galerkin=err, err_sketched_galerkin=M.norm(u - urs),
                   err_projection=M.norm(u - project_u(M, U_r, u)))
        r_star = f - B_action(ur)
        row["res_dual"] = M.dual_norm(r_star)
        if exact:
            E = ErrorMatrixAction.from_matrix(M, A, act.dense())
            Ed = E.dense()
            d_uu = delta_uu_exact(Ed, M)
            d_rr, d_ur = delta_galerkin_exact(Ed, U_r, M)
            ka = _kappa(M, A.toarray())
            kb = _kappa(M, E.apply_B(np.eye(M.n)))
            cert = certify({"delta_uu": d_uu}, row["res_dual"])
            row.update(delta_uu=d_uu, delta_urur=d_rr, delta_uur=d_ur, kappa_A=ka, kappa_B=kb,
                       cond_bound=cond_bound(d_uu))
            if cert.interval is not None:
                row.update(cert_lo=cert.interval[0], cert_hi=cert.interval[1], cert_contains=cert.contains(err))
            kA.append(ka)
            kB.append(kb)
        ind.append(res)
        rows.append([t] + list(mu) + list(lam) + [row.get(c) for c in header[1 + l + basis.p:]])
    med = {"indicator_sketched": float(np.median(ind))}
    if exact:
        med.update(kappa_A=float(np.median(kA)), kappa_B=float(np.median(kB)))
        med["kappa_ratio"] = med["kappa_A"] / med["kappa_B"]
    return rows, med


def run_pipeline(cfg: ExperimentConfig, stages=("offline", "online")) -> PipelineResult:
    """Run the requested stages; a failing stage is recorded and later stages are skipped."""
    status = {}
    summary = {"config": {k: v for k, v in cfg.to_dict().items() if k not in ("output", "problem")}}
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg.validate()
        status["config"] = "ok"
    except Exception as exc:  # noqa: BLE001 - reported as a stage status
        status["config"] = f"failed: {exc}"
    csv_path = None
    for stage in stages:
        if any(v != "ok" for v in status.values()):
            status[stage] = "skipped"
            continue
        try:
            if stage == "offline":
                summary["offline"] = run_offline(cfg)
            elif stage == "online":
                rows, med = run_online(cfg)
                csv_path = out / "online.csv"
                with open(csv_path, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(rows[0])
                    for r in rows[1:]:
                        w.writerow([_fmt(v) for v in r])
                summary["online"] = med
            else:
                raise ValueError(f"unknown stage {stage!r}")
            status[stage] = "ok"
        except Exception as exc:  # noqa: BLE001
            log.exception("stage %s failed", stage)
            status[stage] = f"failed: {type(exc).__name__}: {exc}"
    if "offline" not in summary and (out / "offline" / "offline.json").is_file():
        summary["offline"] = read_json(out / "offline" / "offline.json")
    summary["status"] = status
    json_path = write_json(out / "summary.json", _jsonable(summary))
    return PipelineResult(status, csv_path, json_path, summary)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# statistical validation ----------------------------------------------


def _pass_threshold(delta: float, trials: int) -> float:
    return delta + 2.0 * math.sqrt(delta * (1.0 - delta) / trials)


def _vector_failures(kind, eps, delta, d, n, trials, seed, k=None):
    rng = np.random.default_rng([seed, 1])
    V, _ = np.linalg.qr(rng.standard_normal((n, d)))
    if kind == "identity":
        k = n
    elif k is None:
        k = min_rows(kind, eps, delta, d, n)
    fails = 0
    for t in range(trials):
        S = SketchingMatrix.identity(n) if kind == "identity" else SketchingMatrix(kind, k, n, derive_seed(seed, 2, t))
        sv = la.svdvals(S.apply(V))
        fails += bool(np.max(np.abs(sv**2 - 1.0)) > eps)
    return fails, k


def _operator_failures(mode, eps, delta, shape, trials, seed, kinds, M=None):
    rng = np.random.default_rng([seed, 3])
    X0 = rng.standard_normal(shape)
    if mode == "Lambda":
        ref = np.linalg.norm(X0) ** 2
    elif mode == "Xi":
        ref = np.linalg.norm(M.apply_Q(X0)) ** 2
    else:
        ref = np.linalg.norm(M.Q @ X0 @ M.Q.T) ** 2
    fails = 0
    m = None
    for t in range(trials):
        m = build_sketch_map(mode, eps, delta, 1, shape=shape, metric=M, kinds=kinds, seed=derive_seed(seed, 4, t))
        est = np.linalg.norm(m.apply(X0)) ** 2
        fails += bool(abs(est - ref) > eps * ref)
    return fails, m


def validate_embeddings(eps: float = 0.5, delta: float = 0.1, d: int = 5, trials: int = 500, seed: int = 0,
                        kinds=("gaussian", "psrht"), n=None, operators: bool = True) -> dict:
    """Empirical failure rates of the embedding property at calculator sizes.

    A check passes when its failure rate is at most delta plus two binomial
    standard errors. ``n`` maps each kind to the ambient dimension.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if trials < 200:
        raise ValueError("at least 200 trials are required")
    n = dict({"gaussian": 2000, "psrht": 5000, "identity": 64}, **(n or {}))
    thr = _pass_threshold(delta, trials)
    report = {"eps": eps, "delta": delta, "d": d, "trials": trials, "threshold": thr, "checks": {}}
    for kind in kinds:
        fails, k = _vector_failures(kind, eps, delta, d, n[kind], trials, seed)
        rate = fails / trials
        report["checks"][kind] = {"n": n[kind], "k": k, "failures": fails, "rate": rate, "pass": rate <= thr}
    if operators:
        rng = np.random.default_rng([seed, 5])
        B = rng.standard_normal((32, 32))
        M = metric_factorize(B @ B.T + 32 * np.eye(32))
        M64 = metric_factorize(np.eye(64) * 2.0 + np.diag(np.full(63, -0.5), 1) + np.diag(np.full(63, -0.5), -1))
        cases = (("Lambda", (32, 32), None), ("Xi", (64, 16), M64), ("Psi", (32, 32), M))
        for mode, shape, metric in cases:
            fails, m = _operator_failures(mode, eps, delta, shape, trials, seed, ("gaussian",) * 3, metric)
            rate = fails / trials
            report["checks"][mode] = {
                "k_gamma": m.gamma.k, "k_omega": m.omega.k, "k_sigma": m.sigma.k,
                "failures": fails, "rate": rate, "pass": rate <= thr,
            }
    report["pass"] = all(c["pass"] for c in report["checks"].values())
    return report
