"""Command-line front end.

Subcommands: scan, project, lrt, mcmc, coverage, bench, datasets. Machine
output goes to standard output or to files (atomically, write-then-rename);
progress goes to standard error at most once per second. Every flag has an
environment-variable override with the SEROSCAN_ prefix (--prune-tol becomes
SEROSCAN_PRUNE_TOL); an explicit flag beats the environment.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from ._backend import backend_name, get_backend
from .baselines import lrt_pvalue, mc_confset, mh_sample
from .confset import (
    DEFAULT_ALPHA,
    ParamGrid,
    coverage_sim,
    default_grid,
    k_values_from_pi,
    load_set,
    project_interval,
    range_values,
    scan_grid,
)
from .data import builtin_dataset, builtin_names, catalog, parse_dataset
from .model import DEFAULT_PRUNE_TOL, Dataset, ParamPoint, tagged_rng


def _env_name(flag: str) -> str:
    return "SEROSCAN_" + flag.lstrip("-").replace("-", "_").upper()


def _truthy(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


def _add_option(parser, flag, *, type=str, default=None, help="", choices=None):
    env = os.environ.get(_env_name(flag))
    if env is not None:
        default = type(env)
    parser.add_argument(flag, type=type, default=default, choices=choices, help=help)


def _add_flag(parser, flag, *, help=""):
    env = os.environ.get(_env_name(flag))
    default = _truthy(env) if env is not None else False
    parser.add_argument(flag, action="store_true", default=default, help=help)


def _atomic_write(path: str, writer) -> None:
    """Write through a temp file and rename, so partial files never land."""
    target = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(
        dir=os.path.dirname(target), prefix=".tmp-", suffix=os.path.basename(target)
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fp:
            writer(fp)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Progress:
    """Stderr progress reporter, rate-limited to one line per second."""

    def __init__(self, label: str):
        self.label = label
        self._last = 0.0

    def __call__(self, done: int, total: int) -> None:
        now = time.monotonic()
        if now - self._last >= 1.0:
            self._last = now
            pct = 100.0 * done / total if total else 100.0
            print(f"{self.label}: {done}/{total} ({pct:.1f}%)", file=sys.stderr)


def _add_dataset_options(parser) -> None:
    _add_option(parser, "--dataset", help="built-in dataset name")
    _add_option(parser, "--dataset-file", help="path to a dataset JSON document")
    _add_option(
        parser,
        "--combine",
        help="plus-separated built-in names to combine, e.g. santa-clara+la-county",
    )
    _add_flag(
        parser,
        "--shared-calibration",
        help="treat combined calibration arms as the same data, counted once",
    )


def _resolve_dataset(args) -> Dataset:
    chosen = [
        name
        for name, value in (
            ("--dataset", args.dataset),
            ("--dataset-file", args.dataset_file),
            ("--combine", args.combine),
        )
        if value
    ]
    if len(chosen) > 1:
        raise ValueError(f"give only one of {', '.join(chosen)}")
    if args.dataset:
        return builtin_dataset(args.dataset)
    if args.dataset_file:
        with open(args.dataset_file, "r", encoding="utf-8") as fp:
            return parse_dataset(fp.read())
    if args.combine:
        names = [n for n in args.combine.split("+") if n]
        parts = [builtin_dataset(n) for n in names]
        from .data import combine

        return combine(parts, share_calibration=args.shared_calibration)
    raise ValueError("no dataset given (use --dataset, --dataset-file or --combine)")


def _parse_grid_arg(text: str, design) -> ParamGrid:
    """Grid like p=0:0.05:0.0005,q=0.6:1:0.005,pi=0:0.2:0.001.

    Missing axes keep the default grid's values; pi ladders are converted to
    integer infected counts by rounding pi * n_main (half up).
    """
    base = default_grid(design)
    axes = {
        "p": base.p_values,
        "q": base.q_values,
        "k": base.k_values,
    }
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"bad grid axis {part!r} (expected axis=a:b:c)")
        name, _, ladder = part.partition("=")
        name = name.strip()
        pieces = ladder.split(":")
        if len(pieces) != 3:
            raise ValueError(f"bad grid range {ladder!r} (expected start:stop:step)")
        start, stop, step = (float(x) for x in pieces)
        values = range_values(start, stop, step)
        if name == "p":
            axes["p"] = values
        elif name == "q":
            axes["q"] = values
        elif name == "pi":
            axes["k"] = k_values_from_pi(values, design.n_main)
        else:
            raise ValueError(f"unknown grid axis {name!r} (use p, q or pi)")
    return ParamGrid(axes["p"], axes["q"], axes["k"])


def _resolve_grid(args, design) -> ParamGrid:
    if getattr(args, "grid", None):
        return _parse_grid_arg(args.grid, design)
    return default_grid(design)


def _parse_theta(text: str, n_main: int) -> ParamPoint:
    """p,q,pi triple; prevalence converts to the integer infected count."""
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError(f"theta must be p,q,pi, got {text!r}")
    p, q, pi = (float(x) for x in parts)
    (k,) = k_values_from_pi([pi], n_main)
    return ParamPoint(p, q, k)


def _parse_conditions(text: str | None) -> dict[str, float] | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise ValueError(f"bad condition {part!r} (expected axis=value)")
        out[name.strip()] = float(value)
    return out


def _print_intervals(set_like, axis: str, method: str) -> None:
    intervals = project_interval(set_like, axis, None, method)
    if not intervals:
        print(f"{method} {axis}: empty")
        return
    text = " ".join(f"[{lo!r}, {hi!r}]" for lo, hi in intervals)
    print(f"{method} {axis}: {text}")


def _grid_meta(grid: ParamGrid) -> dict:
    return {
        "p_values": list(grid.p_values),
        "q_values": list(grid.q_values),
        "k_values": list(grid.k_values),
    }


def cmd_scan(args) -> int:
    dataset = _resolve_dataset(args)
    grid = _resolve_grid(args, dataset.design)
    t0 = time.perf_counter()
    conf = scan_grid(
        grid,
        dataset,
        alpha=args.alpha,
        method=args.method,
        workers=args.workers,
        prune_tol=args.prune_tol,
        progress=_Progress(f"scan {dataset.label}"),
    )
    elapsed = time.perf_counter() - t0

    out = args.out or f"scan-{dataset.label}.{args.format}"
    if args.format == "csv":
        _atomic_write(out, conf.dump_csv)
    else:
        _atomic_write(out, conf.dump_json)
    meta = {
        "dataset": dataset.label,
        "alpha": args.alpha,
        "method": args.method,
        "prune_tol": args.prune_tol,
        "seed": args.seed,
        "workers": args.workers,
        "backend": backend_name(),
        "version": __version__,
        "elapsed_seconds": elapsed,
        "max_mass_deficit": conf.max_mass_deficit,
        "grid": _grid_meta(grid),
    }
    _atomic_write(out + ".meta.json", lambda fp: json.dump(meta, fp, indent=2))

    print(f"dataset: {dataset.label}")
    for method in ("basic", "alt"):
        _print_intervals(conf, "pi", method)
    print(f"wrote {out}")
    print(f"wrote {out}.meta.json")
    return 0


def cmd_project(args) -> int:
    if not args.set:
        raise ValueError("project needs --set pointing at a saved scan")
    conf = load_set(args.set)
    condition = _parse_conditions(args.condition)
    methods = ("basic", "alt") if args.method == "both" else (args.method,)
    for method in methods:
        intervals = project_interval(conf, args.axis, condition, method)
        if not intervals:
            print(f"{method} {args.axis}: empty")
        else:
            text = " ".join(f"[{lo!r}, {hi!r}]" for lo, hi in intervals)
            print(f"{method} {args.axis}: {text}")
    return 0


def _lrt_points(args, dataset) -> list[ParamPoint]:
    design = dataset.design
    points: list[ParamPoint] = []
    for text in args.theta or []:
        points.append(_parse_theta(text, design.n_main))
    if args.theta_file:
        with open(args.theta_file, "r", encoding="utf-8") as fp:
            header = fp.readline().strip().split(",")
            idx = {name: i for i, name in enumerate(header)}
            for name in ("p", "q", "pi"):
                if name not in idx:
                    raise ValueError("theta file needs a p,q,pi header")
            for line in fp:
                if not line.strip():
                    continue
                row = line.split(",")
                points.append(
                    _parse_theta(
                        f"{row[idx['p']]},{row[idx['q']]},{row[idx['pi']]}",
                        design.n_main,
                    )
                )
    if args.sample:
        grid = _resolve_grid(args, design)
        rng = tagged_rng("sample", args.seed)
        chosen = rng.choice(grid.size, size=min(args.sample, grid.size), replace=False)
        points.extend(grid.theta_at(int(i)) for i in sorted(chosen))
    if not points:
        raise ValueError("no points given (use --theta, --theta-file or --sample)")
    return points


def cmd_lrt(args) -> int:
    dataset = _resolve_dataset(args)
    points = _lrt_points(args, dataset)
    progress = _Progress("lrt")
    rows = []
    for i, theta in enumerate(points):
        res = lrt_pvalue(
            theta,
            dataset,
            r=args.r,
            seed=args.seed,
            alpha=args.alpha,
            tail=args.lrt_tail,
        )
        rows.append(res)
        progress(i + 1, len(points))

    def write(fp):
        fp.write("p,q,k,pi,t_obs,pvalue,reject\n")
        for res in rows:
            theta = res.theta
            fp.write(
                f"{theta.p!r},{theta.q!r},{theta.k},"
                f"{theta.prevalence(dataset.design.n_main)!r},"
                f"{res.t_obs!r},{res.pvalue!r},"
                f"{'true' if res.reject else 'false'}\n"
            )

    if args.out:
        _atomic_write(args.out, write)
        print(f"wrote {args.out}")
    else:
        write(sys.stdout)
    return 0


def cmd_mcmc(args) -> int:
    dataset = _resolve_dataset(args)
    chain = mh_sample(
        dataset,
        iters=args.iters,
        burn_frac=args.burn,
        proposal_sd=args.proposal_sd,
        seed=args.seed,
        mode=args.mode,
    )
    out = args.out or f"trace-{dataset.label}.csv"
    _atomic_write(out, chain.dump_csv)

    prev = chain.prevalence()
    lo, hi = (float(v) for v in np.percentile(prev, [2.5, 97.5]))
    print(f"acceptance_rate: {chain.acceptance_rate!r}")
    print(f"credible pi: [{lo!r}, {hi!r}]")

    grid = _resolve_grid(args, dataset.design)
    mc = mc_confset(chain, dataset, grid)
    _print_intervals(mc, "pi", "alt")
    print(f"wrote {out}")
    return 0


def cmd_coverage(args) -> int:
    if args.dataset_design:
        design = builtin_dataset(args.dataset_design).design
    else:
        design = _resolve_dataset(args).design
    theta = _parse_theta(args.theta, design.n_main)
    result = coverage_sim(
        theta,
        design,
        reps=args.reps,
        alpha=args.alpha,
        seed=args.seed,
        prune_tol=args.prune_tol,
        progress=_Progress("coverage"),
    )
    print(f"theta: p={theta.p!r} q={theta.q!r} k={theta.k}")
    print(f"reps: {result.reps}")
    print(f"coverage basic: {result.coverage_basic!r}")
    print(f"coverage alt: {result.coverage_alt!r}")
    return 0


def cmd_bench(args) -> int:
    dataset = _resolve_dataset(args)
    design = dataset.design
    theta = (
        _parse_theta(args.theta, design.n_main)
        if args.theta
        else ParamPoint(0.005, 0.9, k_values_from_pi([0.012], design.n_main)[0])
    )

    backends = []
    for name in ("cython", "python"):
        try:
            get_backend(name)
            backends.append(name)
        except ImportError:
            continue

    for name in backends:
        kern = get_backend(name)
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            kern.theta_evidence(
                design.n_cal_neg,
                design.n_cal_pos,
                design.n_main,
                theta.p,
                theta.q,
                theta.k,
                dataset.observed.s_cal_neg,
                dataset.observed.s_cal_pos,
                dataset.observed.s_main,
                args.prune_tol,
                1e-12,
            )
            best = min(best, time.perf_counter() - t0)
        print(f"backend={name} single_theta_seconds={best!r}")

        # time a contiguous prefix of the canonical grid order
        grid = _resolve_grid(args, design)
        n_points = min(args.scan_points, grid.size)
        t0 = time.perf_counter()
        kern.scan_chunk(
            design.n_cal_neg,
            design.n_cal_pos,
            design.n_main,
            dataset.observed.s_cal_neg,
            dataset.observed.s_cal_pos,
            dataset.observed.s_main,
            np.asarray(grid.p_values),
            np.asarray(grid.q_values),
            np.asarray(grid.k_values, dtype=np.int64),
            0,
            n_points,
            args.prune_tol,
            1e-12,
        )
        dt = time.perf_counter() - t0
        print(
            f"backend={name} scan_points={n_points} seconds={dt!r} "
            f"per_theta={dt / n_points!r}"
        )
    return 0


def cmd_datasets(args) -> int:
    if args.action == "list":
        for name, ds in catalog().items():
            d = ds.design
            o = ds.observed
            print(
                f"{name}: design=({d.n_cal_neg},{d.n_cal_pos},{d.n_main}) "
                f"observed=({o.s_cal_neg},{o.s_cal_pos},{o.s_main})"
            )
            if ds.notes:
                print(f"  {ds.notes}")
        return 0
    # validate
    if not args.dataset_file:
        raise ValueError("datasets validate needs --dataset-file")
    with open(args.dataset_file, "r", encoding="utf-8") as fp:
        ds = parse_dataset(fp.read())
    print(f"ok: {ds.label}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seroscan",
        description="Confidence sets for prevalence and test error rates "
        "from serology count data.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, grid=True):
        _add_option(sp, "--alpha", type=float, default=DEFAULT_ALPHA)
        _add_option(sp, "--prune-tol", type=float, default=DEFAULT_PRUNE_TOL)
        _add_option(sp, "--seed", type=int, default=0)
        _add_option(sp, "--workers", type=int, default=1)
        _add_option(sp, "--out", help="output file path")
        if grid:
            _add_option(
                sp,
                "--grid",
                help="axis ladders, e.g. p=0:0.05:0.0005,q=0.6:1:0.005,pi=0:0.2:0.001",
            )

    sp = sub.add_parser("scan", help="invert the tests over a grid")
    _add_dataset_options(sp)
    common(sp)
    _add_option(sp, "--method", default="both", choices=("basic", "alt", "both"))
    _add_option(sp, "--format", default="csv", choices=("csv", "json"))
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("project", help="project a saved set onto one axis")
    _add_option(sp, "--set", help="path of a saved scan (csv or json)")
    _add_option(sp, "--axis", default="pi", choices=("p", "q", "pi"))
    _add_option(sp, "--method", default="both", choices=("basic", "alt", "both"))
    _add_option(sp, "--condition", help="fix other axes, e.g. p=0.005")
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("lrt", help="simulated likelihood-ratio test")
    _add_dataset_options(sp)
    common(sp)
    sp.add_argument("--theta", action="append", help="p,q,pi (repeatable)")
    _add_option(sp, "--theta-file", help="CSV of points with p,q,pi header")
    _add_option(sp, "--sample", type=int, help="evaluate N random grid points")
    _add_option(sp, "--r", type=int, default=1000, help="simulations per point")
    _add_option(sp, "--lrt-tail", default="upper", choices=("upper", "lower"))
    sp.set_defaults(func=cmd_lrt)

    sp = sub.add_parser("mcmc", help="quasi-posterior sampling and its set")
    _add_dataset_options(sp)
    common(sp)
    _add_option(sp, "--iters", type=int, default=200_000)
    _add_option(sp, "--burn", type=float, default=0.2)
    _add_option(sp, "--proposal-sd", type=float, default=0.25)
    _add_option(sp, "--mode", default="random-walk", choices=("random-walk", "independence"))
    sp.set_defaults(func=cmd_mcmc)

    sp = sub.add_parser("coverage", help="empirical coverage at a parameter point")
    _add_dataset_options(sp)
    _add_option(sp, "--dataset-design", help="built-in whose design to simulate")
    common(sp, grid=False)
    _add_option(sp, "--theta", default="0.01,0.85,0.01", help="p,q,pi")
    _add_option(sp, "--reps", type=int, default=500)
    sp.set_defaults(func=cmd_coverage)

    sp = sub.add_parser("bench", help="time the evidence kernels")
    _add_dataset_options(sp)
    common(sp)
    _add_option(sp, "--method", default="alt", choices=("basic", "alt", "both"))
    _add_option(sp, "--theta", help="p,q,pi (defaults to a mid-grid point)")
    _add_option(sp, "--repeat", type=int, default=3)
    _add_option(sp, "--scan-points", type=int, default=2000)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("datasets", help="list built-ins or validate a file")
    sp.add_argument("action", choices=("list", "validate"))
    _add_option(sp, "--dataset-file", help="dataset JSON to validate")
    sp.set_defaults(func=cmd_datasets)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # CLI boundary: diagnostics, not tracebacks
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
