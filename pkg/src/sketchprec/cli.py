"""Command line entry point: ``sketchprec {generate,offline,online,validate,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .io import read_json, write_json
from .pipeline import ExperimentConfig, run_pipeline, validate_embeddings
from .preconditioner import OBJECTIVES
from .problems import FAMILIES, generate_problem, write_bundle
from .sketching import KINDS


def _add_experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with experiment settings; flags override it")
    p.add_argument("--problem", help="problem bundle directory")
    p.add_argument("--output", help="output directory")
    p.add_argument("--objective", choices=OBJECTIVES)
    p.add_argument("--p-max", type=int, dest="p_max")
    p.add_argument("--r", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--K-star", type=float, dest="K_star")
    p.add_argument("--tol", type=float)
    p.add_argument("--kinds", nargs=3, choices=KINDS, metavar="KIND", help="Gamma, Omega and Sigma kinds")
    p.add_argument("--compress", action="store_true", default=None, help="compress the system online")


def _config(args) -> ExperimentConfig:
    d = read_json(args.config) if args.config else {}
    for key in ExperimentConfig.__dataclass_fields__:
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    missing = [k for k in ("problem", "output") if k not in d]
    if missing:
        raise SystemExit(f"missing required setting(s): {', '.join(missing)}")
    return ExperimentConfig.from_dict(d)


def _cmd_generate(args) -> int:
    prob = generate_problem(args.family, args.n, args.m_A, args.contrast, seed=args.seed,
                            n_train=args.n_train, n_test=args.n_test)
    path = write_bundle(prob, args.output)
    print(f"wrote {path}")
    return 0


def _cmd_stage(stages):
    def run(args) -> int:
        res = run_pipeline(_config(args), stages=stages)
        for stage, status in res.status.items():
            print(f"{stage}: {status}")
        return 0 if res.ok else 1

    return run


def _cmd_validate(args) -> int:
    rep = validate_embeddings(args.eps, args.delta, args.d, args.trials, seed=args.seed,
                              kinds=args.kinds, operators=not args.no_operators)
    for name, chk in rep["checks"].items():
        print(f"{name}: rate {chk['rate']:.4f} (threshold {rep['threshold']:.4f}) {'pass' if chk['pass'] else 'FAIL'}")
    if args.output:
        Path(args.output).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.output) / "validation.json", rep)
    return 0 if rep["pass"] else 1


def _cmd_report(args) -> int:
    out = Path(args.output)
    summary = read_json(out / "summary.json")
    print(json.dumps(summary.get("online", {}), indent=2, sort_keys=True))
    csv_path = out / "online.csv"
    if csv_path.is_file():
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        print(f"{len(rows)} online rows in {csv_path}")
    status = summary.get("status", {})
    for stage, st in status.items():
        print(f"{stage}: {st}")
    return 0 if all(v == "ok" for v in status.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sketchprec", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a benchmark problem bundle")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m-A", type=int, dest="m_A", default=3)
    g.add_argument("--contrast", type=float, default=100.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=100)
    g.add_argument("--n-test", type=int, default=50)
    g.add_argument("--output", required=True)
    g.set_defaults(func=_cmd_generate)

    for name, stages in (("offline", ("offline",)), ("online", ("online",))):
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_experiment_args(p)
        p.set_defaults(func=_cmd_stage(stages))
    p = sub.add_parser("run", help="run offline then online")
    _add_experiment_args(p)
    p.set_defaults(func=_cmd_stage(("offline", "online")))

    v = sub.add_parser("validate", help="Monte-Carlo check of embedding sizes")
    v.add_argument("--eps", type=float, default=0.5)
    v.add_argument("--delta", type=float, default=0.1)
    v.add_argument("--d", type=int, default=5)
    v.add_argument("--trials", type=int, default=500)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--kinds", nargs="+", choices=KINDS, default=["gaussian", "psrht"])
    v.add_argument("--no-operators", action="store_true", help="skip the Lambda/Xi/Psi checks")
    v.add_argument("--output")
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("report", help="summarize a finished run")
    r.add_argument("--output", required=True)
    r.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
