"""Command-line workflows: synthesize, train, reference, run.

Exit codes: 0 success, 2 configuration or format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from . import io as rio
from .bayesopt import latin_hypercube, reference_map, run_active_learning, train_models
from .dynamics import synthesize_observations
from .errors import ConfigError, FormatError, NumericalError, RpceError
from .pce_basis import from_standard_normal
from .rpce import evaluate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("rpcemap")


def _seed(cfg, override):
    seed = cfg.seed if override is None else override
    if not 0 <= seed < 2**64:
        raise ConfigError("--seed: expected an unsigned 64-bit integer")
    return int(seed)


def _child_ints(seed, n):
    """``n`` independent integer seeds derived from a master seed."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# -- synthesize -----------------------------------------------------------------

def cmd_synthesize(cfg, out, seed):
    x_true = C.true_parameters(cfg)
    err = C.error_model(cfg, for_synthesis=True)
    p = cfg.problem
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    obs = synthesize_observations(C.forward_model(cfg), x_true, p.frequencies, p.sensors, err, rng)
    out = Path(out)
    rio.write_observations(out, obs)
    rio.write_json(rio.truth_path(out), rio.truth_to_dict(p.parameters, x_true, seed, cfg.error.noiseless))
    return obs


# -- reference --------------------------------------------------------------------

def reference_record(cfg, problem, seed):
    u, h = reference_map(problem, C.reference_pso(cfg), np.random.default_rng(np.random.SeedSequence(seed)),
                         cfg.bo.polish)
    x = problem.to_physical(u)
    return {
        "format_version": 1,
        "kind": "reference_map",
        "parameters": list(cfg.problem.parameters),
        "u": [float(v) for v in u],
        "x": [float(v) for v in x],
        "h": float(h),
        "seed": int(seed),
    }


def cmd_reference(cfg, data, out, seed):
    problem = C.inverse_problem(cfg, rio.read_observations(data))
    rec = reference_record(cfg, problem, seed)
    if out:
        rio.write_json(out, rec)
    return rec


# -- train ------------------------------------------------------------------------

def cmd_train(cfg, out, seed):
    """Surrogates on a fixed LHS design, validated on a held-out LHS set."""
    d = len(cfg.problem.parameters)
    priors = C.priors_of(cfg)
    forward = C.forward_model(cfg)
    s_train, s_val = np.random.SeedSequence(seed).spawn(2)
    u_tr = latin_hypercube(cfg.train.n_train, d, np.random.default_rng(s_train))
    u_val = latin_hypercube(cfg.train.n_validation, d, np.random.default_rng(s_val))
    y_tr = np.asarray(forward(from_standard_normal(u_tr, priors)), dtype=complex)
    y_val = np.asarray(forward(from_standard_normal(u_val, priors)), dtype=complex)
    models = train_models(u_tr, y_tr, cfg.trainer)
    report = []
    for i, m in enumerate(models):
        err = evaluate(m, u_val) - y_val[:, i]
        rmse = float(np.sqrt(np.mean(np.abs(err) ** 2)))
        scale = float(np.sqrt(np.mean(np.abs(y_val[:, i]) ** 2)))
        report.append({"output": i, "n_p": m.n_p, "n_q": m.n_q, "converged": bool(m.info.converged),
                       "validation_rmse": rmse, "validation_relative_rmse": rmse / scale})
    if out:
        rio.write_json(out, rio.models_to_dict([({"design": "lhs", "seed": int(seed)}, models)],
                                               {"validation": report}))
    return models, report


# -- run --------------------------------------------------------------------------

def _run_rep(cfg, observations, rep, seed, u_ref, live):
    problem = C.inverse_problem(cfg, observations)
    progress = (lambda line: print(f"{rep},{line}", flush=True)) if live else None
    try:
        return run_active_learning(problem, C.active_learning_config(cfg, seed), u_ref, progress)
    except NumericalError as exc:
        raise NumericalError(f"rep {rep}: {exc}") from exc


def history_rows(rep, history):
    rows = []
    for r in history.records:
        rows.append([rep, r.iteration, r.n_tr, *[float(v) for v in r.u_plus], r.h_plus, r.h_max,
                     r.eps_map_simple, r.eps_map_global, r.rejects, r.seconds])
    return rows


def history_header(d):
    return ["rep", "iter", "n_tr", *[f"u_plus_{j + 1}" for j in range(d)], "h_plus", "h_max",
            "eps_map_simple", "eps_map_global", "rejects", "seconds"]


def _stats(values):
    v = np.asarray(values, dtype=float)
    return {"median": float(np.median(v)), "min": float(np.min(v)), "max": float(np.max(v)), "count": int(v.size)}


def summarize(histories, reference, seeds):
    """Median/min/max of the MAP errors per training-set size across repetitions."""
    by_n = {}
    fixed = {}
    for hist in histories:
        for r in hist.records:
            by_n.setdefault(r.n_tr, {"global": [], "simple": [], "h_max": []})
            by_n[r.n_tr]["global"].append(r.eps_map_global)
            by_n[r.n_tr]["simple"].append(r.eps_map_simple)
            by_n[r.n_tr]["h_max"].append(r.h_max)
        for f in hist.fixed_design:
            fixed.setdefault(f["n_tr"], []).append(f["eps_map"])
    rows = []
    for n in sorted(by_n):
        row = {"n_tr": int(n), "eps_map_global": _stats(by_n[n]["global"]),
               "eps_map_simple": _stats(by_n[n]["simple"]), "h_max": _stats(by_n[n]["h_max"])}
        if n in fixed:
            row["eps_map_fixed_design"] = _stats(fixed[n])
        rows.append(row)
    return {"format_version": 1, "kind": "run_summary", "reference": reference, "n_rep": len(histories),
            "rep_seeds": [int(s) for s in seeds], "by_n_tr": rows}


def cmd_run(cfg, data, out_dir, seed, parallel=False):
    observations = rio.read_observations(data)
    problem = C.inverse_problem(cfg, observations)
    n_rep = cfg.bo.n_rep
    seeds = _child_ints(seed, n_rep + 1)
    reference = reference_record(cfg, problem, seeds[0])
    u_ref = np.asarray(reference["u"])
    rep_seeds = seeds[1:]
    results = []
    if parallel and n_rep > 1:
        workers = min(n_rep, os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_rep, cfg, observations, r, s, u_ref, False) for r, s in enumerate(rep_seeds)]
            results = [f.result() for f in futures]
        for r, (hist, _) in enumerate(results):
            for rec in hist.records:
                print(f"{r},{hist.progress_line(rec)}")
    else:
        results = [_run_rep(cfg, observations, r, s, u_ref, True) for r, s in enumerate(rep_seeds)]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = problem.dimension
    rows = [row for r, (hist, _) in enumerate(results) for row in history_rows(r, hist)]
    (out / "history.csv").write_text(rio.csv_text(history_header(d), rows))
    fixed_rows = [[r, f["n_tr"], *[float(v) for v in f["u"]], f["h"], f["eps_map"]]
                  for r, (hist, _) in enumerate(results) for f in hist.fixed_design]
    if fixed_rows:
        header = ["rep", "n_tr", *[f"u_{j + 1}" for j in range(d)], "h", "eps_map"]
        (out / "fixed_design.csv").write_text(rio.csv_text(header, fixed_rows))
    groups = [({"rep": r, "seed": int(rep_seeds[r])}, models) for r, (_, models) in enumerate(results)]
    rio.write_json(out / "models.json", rio.models_to_dict(groups))
    summary = summarize([h for h, _ in results], reference, rep_seeds)
    rio.write_json(out / "summary.json", summary)
    return summary


# -- entry point --------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="rpcemap", description="MAP estimation with rational PCE surrogates")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, data_required=True):
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        if data:
            p.add_argument("--data", required=data_required, help="observation JSON file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synthesize", help="generate synthetic observations")
    common(p, data=False)
    p.add_argument("--out", required=True, help="observation file to write")
    p = sub.add_parser("train", help="train surrogates on a fixed design")
    common(p, data=False)
    p.add_argument("--out", required=True, help="models.json to write")
    p = sub.add_parser("reference", help="exact-model reference MAP")
    common(p)
    p.add_argument("--out", default=None, help="reference record to write (stdout otherwise)")
    p = sub.add_parser("run", help="active-learning MAP estimation")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--parallel-reps", action="store_true", help="run repetitions in parallel processes")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_run_config(args.config)
        seed = _seed(cfg, args.seed)
        if args.command == "synthesize":
            obs = cmd_synthesize(cfg, args.out, seed)
            print(f"wrote {obs.n_obs} observations to {args.out}")
        elif args.command == "train":
            _, report = cmd_train(cfg, args.out, seed)
            for r in report:
                print(f"output {r['output']}: n_p={r['n_p']} n_q={r['n_q']} converged={r['converged']} "
                      f"validation_rmse={r['validation_rmse']:.6g} relative={r['validation_relative_rmse']:.6g}")
        elif args.command == "reference":
            rec = cmd_reference(cfg, args.data, args.out, seed)
            if not args.out:
                sys.stdout.write(rio.dumps(rec))
        elif args.command == "run":
            summary = cmd_run(cfg, args.data, args.out, seed, args.parallel_reps)
            last = summary["by_n_tr"][-1]
            print(f"n_tr={last['n_tr']} median eps_map_global={last['eps_map_global']['median']:.6g}")
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RpceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK
