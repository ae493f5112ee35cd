"""Command line: run, sweep, hardcase, report.

Exit codes: 0 success, 2 configuration error, 3 algorithm failure.
POLYBANDIT_THREADS caps BLAS threads; POLYBANDIT_WORKERS sizes the sweep pool.
"""
from __future__ import annotations

import argparse
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_ALGO = 0, 2, 3


def _limit_threads():
    n = os.environ.get("POLYBANDIT_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _parse_values(vals, axis):
    out = []
    for v in vals:
        x = float(v)
        out.append(int(x) if x.is_integer() else x)
    return out


def cmd_run(args):
    from .config import load_config
    from .runners import run_config

    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    for seed in seeds:
        tr = run_config(cfg, seed)
        path = args.out or cfg.output
        if path:
            path = path.format(seed=seed)
            d = os.path.dirname(path)
            if d:
                os.makedirs(d, exist_ok=True)
            tr.to_csv(path, max_rows=args.max_rows)
        print(f"seed {seed}: T={tr.horizon} regret={tr.final_regret:.6g} flags={tr.flags or '-'}"
              + (f" -> {path}" if path else ""))
    return EXIT_OK


def cmd_sweep(args):
    from .config import load_config
    from .sweep import sweep

    cfg = load_config(args.config)
    res = sweep(cfg, args.axis, _parse_values(args.values, args.axis), metric=args.metric,
                workers=args.workers, min_seeds=args.min_seeds)
    text = res.to_csv(args.out)
    sys.stdout.write(text)
    if res.fit is not None:
        print(f"slope {res.fit}")
    return EXIT_OK


def cmd_hardcase(args):
    import numpy as np

    from ..env import BanditSession, make_random_model
    from ..noiseless import identify_finite_class, ucb_hard_case_run
    from ..streams import stream

    ucb, rnd = [], []
    for seed in range(args.seeds):
        model = make_random_model("HARDCASE", args.d, p=args.p, seed=seed)
        plays, tr = ucb_hard_case_run(BanditSession(model, sigma=0.0, seed=seed), args.tiebreak,
                                      certificate=args.certificate)
        if not (tr.summary["certificate_ok"] and tr.summary["all_vertices"]):
            print("vertex certificate failed", file=sys.stderr)
            return EXIT_ALGO
        ucb.append(plays)
        _, used = identify_finite_class(BanditSession(model, sigma=0.0, seed=seed), stream(seed, "hardcase-random"))
        rnd.append(used)
    rows = [("ucb-" + args.tiebreak, ucb), ("random", rnd)]
    lines = ["method,d,p,seeds,mean_plays,max_plays"]
    for name, v in rows:
        lines.append(f"{name},{args.d},{args.p},{args.seeds},{float(np.mean(v))!r},{max(v)}")
    text = "\r\n".join(lines) + "\r\n"
    print(f"{'method':<18}{'mean plays':>12}{'max plays':>12}")
    for name, v in rows:
        print(f"{name:<18}{np.mean(v):>12.2f}{max(v):>12d}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_report(args):
    from .report import report

    text = report(args.traces, args.out, args.gnuplot)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="polybandit", description="Structured polynomial bandit experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--max-rows", type=int, default=None)
    r.set_defaults(fn=cmd_run)
    s = sub.add_parser("sweep", help="scaling sweep with log-log slope")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", choices=["d", "T", "H"], required=True)
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--metric", default="regret")
    s.add_argument("--workers", type=int)
    s.add_argument("--min-seeds", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_sweep)
    h = sub.add_parser("hardcase", help="optimistic vs random play on the hard instance")
    h.add_argument("--d", type=int, default=12)
    h.add_argument("--p", type=int, default=3)
    h.add_argument("--tiebreak", choices=["adversarial", "lex", "uniform"], default="adversarial")
    h.add_argument("--seeds", type=int, default=10)
    h.add_argument("--certificate", type=int, default=1000)
    h.add_argument("--out")
    h.set_defaults(fn=cmd_hardcase)
    p = sub.add_parser("report", help="merge traces into a comparison CSV")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out")
    p.add_argument("--gnuplot")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    from .config import ConfigError
    from .sweep import IncompleteGrid

    args = build_parser().parse_args(argv)
    limiter = _limit_threads()
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IncompleteGrid as e:
        print(f"sweep failed: {e}", file=sys.stderr)
        return EXIT_ALGO
    except (RuntimeError, ValueError, ArithmeticError) as e:
        print(f"algorithm failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ALGO
    finally:
        if limiter is not None:
            limiter.unregister() if hasattr(limiter, "unregister") else None


if __name__ == "__main__":
    sys.exit(main())
