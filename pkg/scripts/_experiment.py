"""Shared driver: synthesize observations, run active learning, print the error table."""

import argparse
from pathlib import Path

from rpcemap import cli
from rpcemap import config as C

CONFIGS = Path(__file__).resolve().parent / "configs"


def run(config_name, description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--out", default=f"results/{Path(config_name).stem}", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    parser.add_argument("--n-rep", type=int, default=None, help="number of repetitions")
    parser.add_argument("--parallel-reps", action="store_true")
    args = parser.parse_args()

    cfg = C.load_run_config(CONFIGS / config_name)
    if args.n_rep is not None:
        cfg.bo.n_rep = args.n_rep
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "observations.json"
    cli.cmd_synthesize(cfg, data, seed)
    summary = cli.cmd_run(cfg, data, out, seed, args.parallel_reps)

    print(f"reference u = {summary['reference']['u']}")
    print(f"{'n_tr':>5} {'global med':>11} {'global max':>11} {'simple med':>11} {'h_max med':>11}")
    for row in summary["by_n_tr"]:
        g, s, h = row["eps_map_global"], row["eps_map_simple"], row["h_max"]
        line = f"{row['n_tr']:>5} {g['median']:>11.3e} {g['max']:>11.3e} {s['median']:>11.3e} {h['median']:>11.4g}"
        if "eps_map_fixed_design" in row:
            line += f"  fixed design {row['eps_map_fixed_design']['median']:.3e}"
        print(line)
    print(f"outputs in {out}")
