"""lab: run experiments, plot their traces, print their reports.

    lab run CONFIG.toml [CONFIG.toml ...] [--set key=value]... [--deterministic] [--jobs N]
    lab plot RUN_DIR
    lab report RUN_DIR

Exit codes: 0 all checks passed, 2 invalid configuration, 1 runtime failure,
3 the run finished but at least one check failed.
"""
from __future__ import annotations

import os

# one BLAS thread per process keeps floating-point reductions reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import traceback  # noqa: E402
from concurrent.futures import ProcessPoolExecutor  # noqa: E402
from pathlib import Path  # noqa: E402

from .config import ConfigError, load  # noqa: E402

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_CHECKS = 0, 1, 2, 3

log = logging.getLogger("lab")


def _run_one(path: str, overrides, deterministic: bool) -> tuple:
    """Returns (config path, exit code, output dir or error text)."""
    from .experiments import run

    try:
        cfg = load(path, overrides, deterministic or None)
    except ConfigError as e:
        return path, EXIT_CONFIG, str(e)
    try:
        report = run(cfg)
    except Exception:  # partial artifacts stay on disk
        return path, EXIT_RUNTIME, traceback.format_exc()
    return path, EXIT_OK if report.passed else EXIT_CHECKS, str(cfg.output_dir())


def cmd_run(args) -> int:
    if len(args.configs) > 1:
        # disjoint output directories are required for parallel runs
        outs = []
        for c in args.configs:
            try:
                outs.append(load(c, args.set, args.deterministic or None).output_dir().resolve())
            except ConfigError as e:
                print(f"{c}: invalid config: {e}", file=sys.stderr)
                return EXIT_CONFIG
        if len(set(outs)) != len(outs):
            print("configs share an output directory; give each its own", file=sys.stderr)
            return EXIT_CONFIG
    jobs = max(1, args.jobs)
    if jobs == 1 or len(args.configs) == 1:
        results = [_run_one(c, args.set, args.deterministic) for c in args.configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(_run_one, c, args.set, args.deterministic) for c in args.configs]
            results = [f.result() for f in futs]
    worst = EXIT_OK
    for path, code, msg in results:
        if code == EXIT_CONFIG:
            print(f"{path}: invalid config: {msg}", file=sys.stderr)
        elif code == EXIT_RUNTIME:
            print(f"{path}: run failed\n{msg}", file=sys.stderr)
        else:
            print(f"{path}: {'all checks passed' if code == EXIT_OK else 'some checks failed'} -> {msg}")
            _print_report(Path(msg) / "report.json")
        # config errors outrank runtime failures, which outrank failed checks
        worst = max(worst, code, key=lambda c: {EXIT_OK: 0, EXIT_CHECKS: 1, EXIT_RUNTIME: 2, EXIT_CONFIG: 3}[c])
    return worst


def _print_report(path: Path) -> None:
    rep = json.loads(path.read_text())
    cfg = rep["config"]
    print(f"experiment {cfg['experiment']}  seed {cfg['seed']}  deterministic {cfg['deterministic']}")
    for c in rep["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"  [{status}] criterion {c['criterion']:>2}: {c['name']}  measured={c['measured']}"
              f"  threshold={c['threshold']}")
    print(f"  {len(rep['manifest'])} files in manifest")


def cmd_plot(args) -> int:
    from .plotting import PlotError, plot_dir

    try:
        outs = plot_dir(args.dir)
    except (FileNotFoundError, PlotError) as e:
        print(f"plot: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in outs:
        print(p)
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.dir) / "report.json"
    if not path.exists():
        print(f"report: missing {path}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_report(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="Parabolic thin-obstacle experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one or more experiment configs")
    r.add_argument("configs", nargs="+")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    r.add_argument("--deterministic", action="store_true")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)
    p = sub.add_parser("plot", help="render SVG figures from a run directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_plot)
    q = sub.add_parser("report", help="print a run report")
    q.add_argument("dir")
    q.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
