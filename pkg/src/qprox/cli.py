"""Command-line entry point ``qprox``."""

import argparse
import sys

from . import bench
from .errors import ConfigError, IncompleteTrace


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _jobs(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("--jobs must be at least 1")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="qprox", description="Robust distillation benchmarks and checks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file (defaults are used when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=_seed, help="override the master seed")
        p.add_argument("--jobs", type=_jobs, default=1, help="maximum parallel runs")

    b = sub.add_parser("bench", help="run a benchmark")
    b.add_argument("kind", choices=("loss-robustness", "solver-compare"))
    common(b)
    c = sub.add_parser("certify", help="sampled quasar-convexity certification sweep")
    common(c)
    p = sub.add_parser("plot-data", help="extract figure series from solver traces")
    p.add_argument("--traces", required=True, help="directory of trace CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--run", help="run label such as seed000_rho0.2 (default: first found)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot-data":
            figs = bench.emit_plot_data(args.traces, args.out, args.run)
            for fig, methods in figs.items():
                print("%s: %s" % (fig, ", ".join(methods)))
            return 0
        kind = args.kind if args.command == "bench" else "certify"
        cfg = bench.load_config(args.config, kind, args.seed)
        if kind == "loss-robustness":
            summary = bench.run_loss_robustness(cfg, args.out, args.jobs)
        elif kind == "solver-compare":
            summary = bench.run_solver_comparison(cfg, args.out, args.jobs)
        else:
            rows = bench.run_certification(cfg, args.out, args.jobs)
            bad = [r for r in rows if r[1] == "proven" and r[6] > 0]
            print("%d checks, %d with violations under proven constants" % (len(rows), len(bad)))
            return 0
        for method, corr, metric, n, mean, std in summary:
            if metric == "rel_w_err":
                print("%-14s rho=%-4g rel_w_err %.3e +- %.1e (n=%d)" % (method, corr, mean, std, n))
        return 0
    except (ConfigError, IncompleteTrace, OSError) as exc:
        print("qprox: error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
