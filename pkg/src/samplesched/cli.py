"""Command-line interface: simulate, compare, analyze, gen, gen-dag, bayes.

Batch-oriented and machine-readable: every command writes CSV/JSON under
--out (or a named file) and is byte-for-byte repeatable for a fixed seed.
Exit codes: 0 success, 2 usage/config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from samplesched import bayes, engine, metrics, traceio
from samplesched.domain import Job, SchedulerConfig
from samplesched.scheduler import ALL_POLICIES, HISTORY_POLICIES

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


def _parse_sampling(text: str) -> tuple[str, float]:
    if text == "adaptive":
        return "adaptive", 0.03
    if text.startswith("fixed:"):
        try:
            ratio = float(text.split(":", 1)[1])
        except ValueError as exc:
            raise UsageError(f"bad sampling ratio in {text!r}") from exc
        if not 0 < ratio <= 1:
            raise UsageError("fixed sampling ratio must be in (0, 1]")
        return "fixed", ratio
    raise UsageError(f"--sampling must be 'adaptive' or 'fixed:<ratio>', got {text!r}")


def _add_scheduler_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--machines", type=int, default=150)
    p.add_argument("--queues", type=int, default=10)
    p.add_argument("--q0-hi-ms", type=int, default=10**6)
    p.add_argument("--growth", type=float, default=10.0)
    p.add_argument("--weight-decay", type=float, default=10.0)
    p.add_argument("--thin-limit", type=int, default=3)
    p.add_argument("--sampling", default="adaptive", metavar="adaptive|fixed:<r>")
    p.add_argument("--adaptive-t", type=int, default=100)
    p.add_argument("--window-days", type=int, choices=(3, 7, 14), default=14)
    p.add_argument("--history-split", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)


def _config_from_args(args: argparse.Namespace) -> SchedulerConfig:
    mode, ratio = _parse_sampling(args.sampling)
    try:
        return SchedulerConfig(
            machines=args.machines,
            num_queues=args.queues,
            q0_hi_ms=args.q0_hi_ms,
            growth_factor=args.growth,
            queue_weight_decay=args.weight_decay,
            thin_limit=args.thin_limit,
            sampling_mode=mode,
            fixed_ratio=ratio,
            adaptive_t=args.adaptive_t,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _split_history(jobs: list[Job], frac: float) -> tuple[list[Job], list[Job]]:
    if not 0 <= frac < 1:
        raise UsageError("--history-split must be in [0, 1)")
    cut = int(len(jobs) * frac)
    return jobs[:cut], jobs[cut:]


def _prepare_run(
    jobs: list[Job], policy: str, frac: float, force_split: bool = False
) -> tuple[list[Job], list[Job]]:
    """(history prefix, execution remainder) for one policy."""
    needs_history = policy in HISTORY_POLICIES
    if needs_history or force_split:
        history, execution = _split_history(jobs, frac)
        if needs_history and not history:
            raise UsageError(
                f"policy {policy!r} needs history: give --history-split a "
                "fraction that leaves a nonempty warmup prefix"
            )
        if not execution:
            raise UsageError("history split leaves no jobs to execute")
        return history, execution
    return [], jobs


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    jobs = traceio.parse_trace(args.trace)
    history, execution = _prepare_run(jobs, args.policy, args.history_split)
    result = engine.run(
        execution, args.policy, cfg, history_jobs=history, window_days=args.window_days
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "result.json", "w") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    metrics.write_errors_csv(result, out / "errors.csv")
    metrics.write_summary_csv(
        [metrics.summary_row(result, cfg)], out / "summary.csv"
    )
    print(f"simulated {len(result.records)} jobs under {args.policy}")
    print(f"mean JCT: {result.mean_jct_ms():.1f} ms")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    if len(policies) < 2:
        raise UsageError("--policies needs at least two comma-separated policies")
    for p in policies:
        if p not in ALL_POLICIES:
            raise UsageError(f"unknown policy {p!r}")
    cfg = _config_from_args(args)
    jobs = traceio.parse_trace(args.trace)
    # split once for everyone when any member needs history, so all
    # policies execute an identical job set
    force = any(p in HISTORY_POLICIES for p in policies)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results = {}
    for policy in policies:
        history, execution = _prepare_run(jobs, policy, args.history_split, force)
        results[policy] = engine.run(
            execution, policy, cfg, history_jobs=history, window_days=args.window_days
        )

    target = policies[0]
    rows = [metrics.summary_row(results[target], cfg)]
    for policy in policies[1:]:
        ratios, summary = metrics.jct_speedup(results[policy], results[target])
        metrics.write_speedups_csv(
            ratios, out / f"speedups_{policy}_vs_{target}.csv"
        )
        rows.append(metrics.summary_row(results[policy], cfg, summary))
        print(
            f"{policy} vs {target}: mean speedup "
            f"{summary['mean_speedup']:.3f}, p50 {summary['p50']:.3f}"
        )
    metrics.write_summary_csv(rows, out / "summary.csv")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    jobs = traceio.parse_trace(args.trace)
    windows = [int(w) for w in args.windows.split(",") if w]
    rows = []
    for job in jobs:
        row: dict = {"job_id": job.id}
        for w in windows:
            try:
                row[f"cov_time_w{w}"] = metrics.cov_time(
                    jobs, job, job.arrival_ms, w
                )["min_cov"]
            except metrics.InsufficientHistoryError:
                row[f"cov_time_w{w}"] = ""
        try:
            row["cov_space"] = metrics.cov_space(job.task_durations_ms, args.ratio)
        except metrics.UndefinedMetricError:
            row["cov_space"] = ""
        rows.append(row)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_cov_csv(rows, out / "cov.csv", windows)
    if args.machines:
        _, stats = traceio.load_windows(jobs, args.machines)
        print(
            f"load per window: mean {stats['mean']:.3f} "
            f"p50 {stats['p50']:.3f} p90 {stats['p90']:.3f}"
        )
    print(f"analyzed {len(jobs)} jobs")
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    try:
        spec = traceio.SynthSpec(
            n_jobs=args.n_jobs,
            rate_jobs_per_s=args.rate,
            width_min=args.width_min,
            width_max=args.width_max,
            width_law=args.width_law,
            mu_ms=args.mu_ms,
            sigma0_ms=args.sigma0_ms,
            sigma1_ms=args.sigma1_ms,
            n_apps=args.apps,
            n_users=args.users,
            n_names=args.names,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    jobs = traceio.gen_synthetic(spec, rng=engine.substream(args.seed, "gen"))
    traceio.write_trace(jobs, args.out_file)
    print(f"wrote {len(jobs)} jobs to {args.out_file}")
    return EXIT_OK


def cmd_gen_dag(args: argparse.Namespace) -> int:
    base = traceio.parse_trace(args.base)
    jobs = traceio.gen_dag_trace(base, args.seed, rng=engine.substream(args.seed, "dag"))
    traceio.write_trace(jobs, args.out_file)
    print(f"wrote {len(jobs)} staged jobs to {args.out_file}")
    return EXIT_OK


def cmd_bayes(args: argparse.Namespace) -> int:
    sigma0_sq = math.inf if args.sigma0_sq.lower() in ("inf", "infinity") else float(
        args.sigma0_sq
    )
    samples = [float(s) for s in args.samples.split(",") if s] if args.samples else []
    try:
        prior = bayes.GaussianPrior(mu=args.mu, sigma0_sq=sigma0_sq)
        noise = bayes.TaskNoise(sigma1_sq=args.sigma1_sq)
        mean, variance = bayes.sampling_posterior(prior, noise, samples)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"mean {mean:.10g} variance {variance:.10g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="samplesched",
        description="Trace-driven cluster scheduling simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay a trace under one policy")
    p.add_argument("--trace", required=True)
    p.add_argument("--policy", required=True, choices=ALL_POLICIES)
    p.add_argument("--out", default="out")
    _add_scheduler_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several policies on one trace")
    p.add_argument("--trace", required=True)
    p.add_argument(
        "--policies",
        required=True,
        help="comma-separated; the first is the speedup target",
    )
    p.add_argument("--out", default="out")
    _add_scheduler_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="trace variability analytics")
    p.add_argument("--trace", required=True)
    p.add_argument("--windows", default="3,7,14")
    p.add_argument("--ratio", type=float, default=0.03)
    p.add_argument("--machines", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen", help="generate a synthetic trace")
    p.add_argument("--n-jobs", type=int, required=True)
    p.add_argument("--rate", type=float, default=1.0, help="arrival rate, jobs/s")
    p.add_argument("--width-min", type=int, default=1)
    p.add_argument("--width-max", type=int, default=100)
    p.add_argument("--width-law", choices=("uniform", "lognormal"), default="uniform")
    p.add_argument("--mu-ms", type=float, default=100_000.0)
    p.add_argument("--sigma0-ms", type=float, default=10_000.0)
    p.add_argument("--sigma1-ms", type=float, default=10_000.0)
    p.add_argument("--apps", type=int, default=5)
    p.add_argument("--users", type=int, default=5)
    p.add_argument("--names", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gen-dag", help="chain a trace's jobs into staged jobs")
    p.add_argument("--base", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_gen_dag)

    p = sub.add_parser("bayes", help="posterior mean/variance of a mean task length")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--sigma0-sq", required=True, help="prior variance, or 'inf'")
    p.add_argument("--sigma1-sq", type=float, required=True)
    p.add_argument("--samples", default="", help="comma-separated task lengths")
    p.set_defaults(func=cmd_bayes)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, traceio.ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
