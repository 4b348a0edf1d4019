"""Measurement over finished runs: errors, speedups, variability, placement.

All coefficient-of-variation computations use the population standard
deviation.  Signed prediction errors are capped at +1000%; absolute
errors are not capped.  CSV emission for the command-line layer also
lives here so output schemas stay in one place.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from samplesched.domain import Job, JobRecord, SchedulerConfig, SimResult
from samplesched.predictors import FEATURES, feature_value
from samplesched.scheduler import queue_index_for

MS_PER_DAY = 86_400_000
SIGNED_ERROR_CAP = 1000.0

AT_ARRIVAL = "arrival"
AT_ESTIMATE_READY = "estimate-ready"


class InvalidActualError(ValueError):
    pass


class JobSetMismatchError(ValueError):
    pass


class InsufficientHistoryError(LookupError):
    pass


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorRecord:
    """Percentage prediction error of one job, signed part capped at +1000."""

    job_id: str
    signed_pct: float
    abs_pct: float


def prediction_error(
    est_total_ms: float, actual_total_ms: float, job_id: str = ""
) -> ErrorRecord:
    """Signed (capped) and absolute percentage error of a runtime estimate."""
    if actual_total_ms <= 0:
        raise InvalidActualError("actual total must be positive")
    signed = (est_total_ms - actual_total_ms) / actual_total_ms * 100.0
    return ErrorRecord(
        job_id=job_id,
        signed_pct=min(SIGNED_ERROR_CAP, signed),
        abs_pct=abs(signed),
    )


def result_errors(result: SimResult) -> list[ErrorRecord]:
    """Prediction errors for every job in a run that carries an estimate."""
    out = []
    for job_id in sorted(result.records):
        rec = result.records[job_id]
        if rec.estimate is None:
            continue
        out.append(
            prediction_error(rec.estimate.total_ms, rec.actual_total_ms, job_id)
        )
    return out


def jct_speedup(
    baseline: SimResult, target: SimResult
) -> tuple[dict[str, float], dict[str, float]]:
    """Per-job JCT ratios baseline/target plus mean/P50/P90 aggregates.

    The aggregate mean speedup is the ratio of mean JCTs, not the mean of
    ratios; P50/P90 summarize the per-job ratios.
    """
    if set(baseline.records) != set(target.records):
        raise JobSetMismatchError("runs cover different job sets")
    ratios = {
        job_id: baseline.records[job_id].jct_ms / target.records[job_id].jct_ms
        for job_id in baseline.records
    }
    values = np.array(sorted(ratios.values()))
    summary = {
        "mean_speedup": baseline.mean_jct_ms() / target.mean_jct_ms(),
        "p50": float(np.percentile(values, 50)),
        "p90": float(np.percentile(values, 90)),
    }
    return ratios, summary


def _population_cov(values: Sequence[float]) -> float:
    mean = statistics.fmean(values)
    if mean == 0:
        return 0.0
    return statistics.pstdev(values) / mean


def cov_time(
    trace: Sequence[Job],
    target_job: Job,
    now_ms: int,
    window_days: int,
) -> dict:
    """Variation across history: CoV of similar jobs' mean task runtimes.

    For each feature, gathers the average task runtime of trace jobs with
    the same feature value completed in [now - window, now) -- in analysis
    mode a trace job counts as completed at its arrival -- and reports each
    feature's population CoV plus the minimum.  Features need at least two
    matches to participate.
    """
    lo = now_ms - window_days * MS_PER_DAY
    per_feature: dict[str, float] = {}
    for feature in FEATURES:
        wanted = feature_value(target_job.features, feature)
        avgs = [
            j.total_ms / j.task_count
            for j in trace
            if lo <= j.arrival_ms < now_ms
            and feature_value(j.features, feature) == wanted
        ]
        if len(avgs) >= 2:
            per_feature[feature] = _population_cov(avgs)
    if not per_feature:
        raise InsufficientHistoryError(
            f"no feature of job {target_job.id} has two matches in the window"
        )
    best = min(per_feature, key=lambda f: (per_feature[f], FEATURES.index(f)))
    return {
        "per_feature": per_feature,
        "min_cov": per_feature[best],
        "feature": best,
    }


def cov_space(task_durations_ms: Sequence[float], sampling_ratio: float = 0.03) -> float:
    """Variation across a job's own tasks, scaled by the sampled fraction.

    population sigma / (sqrt(ratio * n) * mean); single-task jobs are
    excluded by contract.
    """
    if len(task_durations_ms) < 2:
        raise UndefinedMetricError("cov_space is undefined for single-task jobs")
    if not 0 < sampling_ratio <= 1:
        raise ValueError("sampling ratio must be in (0, 1]")
    mean = statistics.fmean(task_durations_ms)
    sigma = statistics.pstdev(task_durations_ms)
    return sigma / (math.sqrt(sampling_ratio * len(task_durations_ms)) * mean)


def normalized_waiting_time(result: SimResult, job_id: str) -> float:
    """Mean task start delay divided by the job's true mean task length."""
    rec = result.records[job_id]
    waits = [s - rec.arrival_ms for s in rec.task_starts_ms]
    mean_task = rec.actual_total_ms / rec.task_count
    return statistics.fmean(waits) / mean_task


def _queue_at(rec: JobRecord, t_ms: int) -> Optional[int]:
    queue = None
    for when, q in rec.queue_history:
        if when <= t_ms:
            queue = q
        else:
            break
    return queue


def resistance(result: SimResult, job_id: str, at: str = AT_ARRIVAL) -> float:
    """Higher-priority workload standing in front of a job, in cluster-ms.

    At the chosen instant, sums the remaining durations of every running
    task of other jobs plus all unstarted task durations of jobs in
    strictly higher-priority queues or ahead (FIFO by arrival, id) in the
    same queue, divided by the machine count.
    """
    rec = result.records[job_id]
    if at == AT_ARRIVAL:
        t = rec.arrival_ms
    elif at == AT_ESTIMATE_READY:
        if rec.estimate_ready_ms is None:
            raise UndefinedMetricError(f"job {job_id} has no estimate-ready instant")
        t = rec.estimate_ready_ms
    else:
        raise ValueError(f"unknown instant: {at}")

    own_queue = _queue_at(rec, t)
    own_key = (rec.arrival_ms, rec.job_id)
    total = 0.0
    for other_id in result.records:
        if other_id == job_id:
            continue
        other = result.records[other_id]
        if other.arrival_ms > t:
            continue
        other_queue = _queue_at(other, t)
        ahead = other_queue is not None and own_queue is not None and (
            other_queue < own_queue
            or (other_queue == own_queue and (other.arrival_ms, other_id) < own_key)
        )
        for start, finish in zip(other.task_starts_ms, other.task_finishes_ms):
            if start <= t < finish:
                total += finish - t  # running: remaining duration
            elif start > t and ahead:
                total += finish - start  # queued ahead: full duration
    return total / len(result.machine_busy_ms)


def correct_queue_fraction(result: SimResult, cfg: SchedulerConfig) -> float:
    """Fraction of wide estimated jobs whose estimate maps to the true queue."""
    wide = [
        r
        for r in result.records.values()
        if r.width >= cfg.thin_limit and r.estimate is not None
    ]
    if not wide:
        return float("nan")
    correct = sum(
        1
        for r in wide
        if queue_index_for(r.estimate.total_ms, cfg)
        == queue_index_for(r.actual_total_ms, cfg)
    )
    return correct / len(wide)


BIN1, BIN2, BIN3, BIN4 = 1, 2, 3, 4


def bin_of(
    width: int,
    actual_total_ms: float,
    thin_limit: int = 3,
    size_threshold_ms: float = 1_000_000,
) -> int:
    """Quadrant of the (thin/wide, small/large) breakdown a job falls in."""
    thin = width < thin_limit
    small = actual_total_ms < size_threshold_ms
    if thin and small:
        return BIN1
    if not thin and small:
        return BIN2
    if thin and not small:
        return BIN3
    return BIN4


def bin_counts(
    result: SimResult, thin_limit: int = 3, size_threshold_ms: float = 1_000_000
) -> dict[int, int]:
    counts = {BIN1: 0, BIN2: 0, BIN3: 0, BIN4: 0}
    for rec in result.records.values():
        counts[bin_of(rec.width, rec.actual_total_ms, thin_limit, size_threshold_ms)] += 1
    return counts


def misplacement_report(result: SimResult, cfg: SchedulerConfig) -> dict[str, float]:
    """Over/underestimation and queue-misplacement shares among wide jobs.

    All percentages are over the wide jobs that carry estimates; a job is
    misplaced only if the error moved it across a queue boundary.
    """
    wide = [
        r
        for r in result.records.values()
        if r.width >= cfg.thin_limit and r.estimate is not None
    ]
    n = len(wide)
    report = {
        "overestimated_pct": 0.0,
        "underestimated_pct": 0.0,
        "misplaced_over_pct": 0.0,
        "misplaced_under_pct": 0.0,
        "mean_positive_error_pct": 0.0,
        "p50_positive_error_pct": 0.0,
        "mean_negative_error_pct": 0.0,
        "p50_negative_error_pct": 0.0,
    }
    if n == 0:
        return report
    pos, neg = [], []
    over = under = mis_over = mis_under = 0
    for r in wide:
        err = prediction_error(r.estimate.total_ms, r.actual_total_ms, r.job_id)
        est_q = queue_index_for(r.estimate.total_ms, cfg)
        true_q = queue_index_for(r.actual_total_ms, cfg)
        if err.signed_pct > 0:
            over += 1
            pos.append(err.signed_pct)
            if est_q > true_q:
                mis_over += 1
        elif err.signed_pct < 0:
            under += 1
            neg.append(err.signed_pct)
            if est_q < true_q:
                mis_under += 1
    report["overestimated_pct"] = 100.0 * over / n
    report["underestimated_pct"] = 100.0 * under / n
    report["misplaced_over_pct"] = 100.0 * mis_over / n
    report["misplaced_under_pct"] = 100.0 * mis_under / n
    if pos:
        report["mean_positive_error_pct"] = statistics.fmean(pos)
        report["p50_positive_error_pct"] = statistics.median(pos)
    if neg:
        report["mean_negative_error_pct"] = statistics.fmean(neg)
        report["p50_negative_error_pct"] = statistics.median(neg)
    return report


def cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Sorted (value, cumulative fraction) pairs, ready for CSV emission."""
    ordered = sorted(values)
    n = len(ordered)
    return [(v, (i + 1) / n) for i, v in enumerate(ordered)]


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def write_errors_csv(result: SimResult, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["job_id", "signed_pct", "abs_pct"])
        for err in result_errors(result):
            w.writerow([err.job_id, f"{err.signed_pct:.6f}", f"{err.abs_pct:.6f}"])


def write_speedups_csv(ratios: dict[str, float], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["job_id", "ratio"])
        for job_id in sorted(ratios):
            w.writerow([job_id, f"{ratios[job_id]:.6f}"])


def write_cov_csv(
    rows: list[dict], path: Union[str, Path], windows: Sequence[int] = (3, 7, 14)
) -> None:
    """Rows: job_id, cov_time_w<w> per window, cov_space."""
    fields = ["job_id"] + [f"cov_time_w{w}" for w in windows] + ["cov_space"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow(
                {
                    k: (f"{v:.6f}" if isinstance(v, float) else v)
                    for k, v in row.items()
                }
            )


def summary_row(
    result: SimResult,
    cfg: SchedulerConfig,
    speedup_summary: Optional[dict[str, float]] = None,
) -> dict:
    bins = bin_counts(result, cfg.thin_limit)
    frac = correct_queue_fraction(result, cfg)
    return {
        "policy": result.policy,
        "seed": result.seed,
        "jobs": len(result.records),
        "mean_jct_ms": f"{result.mean_jct_ms():.3f}",
        "mean_speedup_vs_target": (
            f"{speedup_summary['mean_speedup']:.6f}" if speedup_summary else ""
        ),
        "p50_speedup_vs_target": (
            f"{speedup_summary['p50']:.6f}" if speedup_summary else ""
        ),
        "p90_speedup_vs_target": (
            f"{speedup_summary['p90']:.6f}" if speedup_summary else ""
        ),
        "correct_queue_frac": "" if math.isnan(frac) else f"{frac:.6f}",
        "bin1": bins[BIN1],
        "bin2": bins[BIN2],
        "bin3": bins[BIN3],
        "bin4": bins[BIN4],
    }


SUMMARY_FIELDS = [
    "policy",
    "seed",
    "jobs",
    "mean_jct_ms",
    "mean_speedup_vs_target",
    "p50_speedup_vs_target",
    "p90_speedup_vs_target",
    "correct_queue_frac",
    "bin1",
    "bin2",
    "bin3",
    "bin4",
]


def write_summary_csv(rows: list[dict], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow(row)
