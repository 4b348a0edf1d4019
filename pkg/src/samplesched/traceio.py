"""Trace serialization, preprocessing, and synthetic workload generation.

Trace files are line-delimited JSON, one job per line:

    {"job_id": str, "arrival_ms": int, "task_durations_ms": [int, ...],
     "features": {"application": str, "job_name": str, "user": str,
                  "submit_day": int, "submit_hour": int,
                  "cpu_req": number, "mem_req": number},
     "stages": [[int, ...], ...]}         # optional; must concatenate
                                          # to task_durations_ms

Synthetic traces follow a two-level Gaussian model: each job draws a true
mean task length from Normal(mu, sigma0^2), each task draws its duration
from Normal(x, sigma1^2); both are redrawn (not clamped) while
nonpositive, so small means are not biased upward.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from samplesched.domain import Job, JobFeatures

log = logging.getLogger(__name__)

MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000


class ParseError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class InvalidDurationError(ParseError):
    pass


def _job_to_dict(job: Job) -> dict:
    d = {
        "job_id": job.id,
        "arrival_ms": job.arrival_ms,
        "task_durations_ms": list(job.task_durations_ms),
        "features": {
            "application": job.features.application,
            "job_name": job.features.job_name,
            "user": job.features.user,
            "submit_day": job.features.submit_day,
            "submit_hour": job.features.submit_hour,
            "cpu_req": job.features.cpu_req,
            "mem_req": job.features.mem_req,
        },
    }
    if job.stages is not None:
        d["stages"] = [list(s) for s in job.stages]
    return d


def _job_from_dict(d: dict, line_number: int) -> Job:
    try:
        durations = d["task_durations_ms"]
        if any(not isinstance(x, int) or x <= 0 for x in durations):
            raise InvalidDurationError(
                line_number, f"nonpositive task duration in job {d.get('job_id')}"
            )
        f = d["features"]
        features = JobFeatures(
            application=f["application"],
            job_name=f["job_name"],
            user=f["user"],
            submit_day=f["submit_day"],
            submit_hour=f["submit_hour"],
            cpu_req=f["cpu_req"],
            mem_req=f["mem_req"],
        )
        stages = d.get("stages")
        return Job(
            id=d["job_id"],
            arrival_ms=d["arrival_ms"],
            task_durations_ms=tuple(durations),
            features=features,
            stages=tuple(tuple(s) for s in stages) if stages is not None else None,
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(line_number, str(exc)) from exc


def parse_trace(path: Union[str, Path]) -> list[Job]:
    """Read a JSONL trace; returns jobs sorted by (arrival, id)."""
    jobs = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(n, f"bad JSON: {exc}") from exc
            jobs.append(_job_from_dict(d, n))
    jobs.sort(key=lambda j: (j.arrival_ms, j.id))
    return jobs


def write_trace(jobs: Sequence[Job], path: Union[str, Path]) -> None:
    """Write jobs as JSONL, one per line, in the given order."""
    with open(path, "w") as fh:
        for job in jobs:
            fh.write(json.dumps(_job_to_dict(job), sort_keys=True))
            fh.write("\n")


def cap_width(jobs: Sequence[Job], max_width: int) -> list[Job]:
    """Drop jobs with more total tasks than max_width; order preserved."""
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    return [j for j in jobs if j.task_count <= max_width]


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic workload generator."""

    n_jobs: int
    rate_jobs_per_s: Optional[float] = 1.0
    arrivals_ms: Optional[tuple[int, ...]] = None
    width_min: int = 1
    width_max: int = 100
    width_law: str = "uniform"  # or "lognormal"
    width_log_mu: float = 3.0
    width_log_sigma: float = 1.0
    mu_ms: float = 100_000.0
    sigma0_ms: float = 10_000.0
    sigma1_ms: float = 10_000.0
    n_apps: int = 5
    n_users: int = 5
    n_names: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")
        if self.mu_ms <= 0:
            raise ValueError("mu_ms must be positive")
        if self.sigma0_ms < 0 or self.sigma1_ms < 0:
            raise ValueError("sigmas must be nonnegative")
        if not 1 <= self.width_min <= self.width_max:
            raise ValueError("need 1 <= width_min <= width_max")
        if self.arrivals_ms is None and not (self.rate_jobs_per_s or 0) > 0:
            raise ValueError("need an arrival rate or explicit arrivals")
        if self.arrivals_ms is not None and len(self.arrivals_ms) != self.n_jobs:
            raise ValueError("explicit arrivals must match n_jobs")


def _positive_gauss(rng: random.Random, mean: float, sigma: float) -> float:
    if sigma == 0:
        return mean
    while True:
        x = rng.gauss(mean, sigma)
        if x > 0:
            return x


def _draw_width(rng: random.Random, spec: SynthSpec) -> int:
    if spec.width_law == "uniform":
        return rng.randint(spec.width_min, spec.width_max)
    if spec.width_law == "lognormal":
        w = int(round(rng.lognormvariate(spec.width_log_mu, spec.width_log_sigma)))
        return min(spec.width_max, max(spec.width_min, w))
    raise ValueError(f"unknown width law: {spec.width_law}")


def gen_synthetic(spec: SynthSpec, rng: Optional[random.Random] = None) -> list[Job]:
    """Generate a trace from the two-level Gaussian model; seeded, repeatable."""
    rng = rng or random.Random(spec.seed)
    if spec.arrivals_ms is not None:
        arrivals = list(spec.arrivals_ms)
    else:
        arrivals, t = [], 0.0
        for _ in range(spec.n_jobs):
            arrivals.append(int(round(t)))
            t += rng.expovariate(spec.rate_jobs_per_s) * 1000.0

    jobs = []
    for i, arrival in enumerate(arrivals):
        width = _draw_width(rng, spec)
        x = _positive_gauss(rng, spec.mu_ms, spec.sigma0_ms)
        durations = tuple(
            max(1, round(_positive_gauss(rng, x, spec.sigma1_ms)))
            for _ in range(width)
        )
        features = JobFeatures(
            application=f"app-{rng.randrange(spec.n_apps)}",
            job_name=f"name-{rng.randrange(spec.n_names)}",
            user=f"user-{rng.randrange(spec.n_users)}",
            submit_day=(arrival // MS_PER_DAY) % 7,
            submit_hour=(arrival // MS_PER_HOUR) % 24,
            cpu_req=float(rng.choice((1, 2, 4, 8))),
            mem_req=float(rng.choice((4, 8, 16))),
        )
        jobs.append(
            Job(
                id=f"job-{i:06d}",
                arrival_ms=arrival,
                task_durations_ms=durations,
                features=features,
            )
        )
    jobs.sort(key=lambda j: (j.arrival_ms, j.id))
    return jobs


def gen_dag_trace(
    base: Sequence[Job], seed: int, rng: Optional[random.Random] = None
) -> list[Job]:
    """Chain consecutive base jobs into staged jobs of 2-5 stages each.

    Stage order follows the base order; the group arrives when its first
    member did, and every stage inherits the first member's job name and
    user.  A leftover tail may form a 1-stage job (logged).
    """
    if not base:
        raise ValueError("base trace is empty")
    rng = rng or random.Random(seed)
    out, i = [], 0
    while i < len(base):
        k = min(rng.randint(2, 5), len(base) - i)
        group = base[i : i + k]
        i += k
        if k == 1:
            log.warning("tail group of a single stage for job %s", group[0].id)
        head = group[0]
        stages = tuple(tuple(j.task_durations_ms) for j in group)
        features = JobFeatures(
            application=head.features.application,
            job_name=head.features.job_name,
            user=head.features.user,
            submit_day=head.features.submit_day,
            submit_hour=head.features.submit_hour,
            cpu_req=head.features.cpu_req,
            mem_req=head.features.mem_req,
        )
        out.append(
            Job(
                id=head.id,
                arrival_ms=head.arrival_ms,
                task_durations_ms=tuple(d for s in stages for d in s),
                features=features,
                stages=stages,
            )
        )
    return out


def load_windows(
    jobs: Sequence[Job],
    machines: int,
    window_ms: int = 1_000_000,
    slide_ms: int = 100_000,
) -> tuple[list[tuple[int, float]], dict[str, float]]:
    """Sliding-window system load plus its mean/P50/P90 summary.

    A window's load is the total runtime of all jobs arriving inside it,
    normalized by machines * window length.
    """
    if machines < 1:
        raise ValueError("machines must be >= 1")
    if not jobs:
        return [], {"mean": 0.0, "p50": 0.0, "p90": 0.0}
    horizon = max(j.arrival_ms for j in jobs)
    starts = range(0, horizon + 1, slide_ms)
    arrivals = sorted((j.arrival_ms, j.total_ms) for j in jobs)
    times = [a for a, _ in arrivals]
    prefix = np.concatenate(([0.0], np.cumsum([w for _, w in arrivals])))

    windows = []
    for start in starts:
        lo = np.searchsorted(times, start, side="left")
        hi = np.searchsorted(times, start + window_ms, side="left")
        work = prefix[hi] - prefix[lo]
        windows.append((start, float(work) / (machines * window_ms)))
    loads = np.array([w for _, w in windows])
    stats = {
        "mean": float(loads.mean()),
        "p50": float(np.percentile(loads, 50)),
        "p90": float(np.percentile(loads, 90)),
    }
    return windows, stats
