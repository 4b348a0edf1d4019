"""Core value types shared by all simulator modules.

Everything here is an immutable value object; behaviour is limited to
constructor validation and a couple of width helpers.  Time is integer
milliseconds throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional


class PredictionSource(str, Enum):
    """Which mechanism produced a runtime estimate."""

    SAMPLING = "sampling"
    HISTORY = "history"
    POINT_ESTIMATE = "point-estimate"
    ORACLE = "oracle"


@dataclass(frozen=True)
class JobFeatures:
    """The job attributes history-based predictors match on."""

    application: str
    job_name: str
    user: str
    submit_day: int
    submit_hour: int
    cpu_req: float
    mem_req: float

    def __post_init__(self):
        if not 0 <= self.submit_day <= 6:
            raise ValueError(f"submit_day out of range: {self.submit_day}")
        if not 0 <= self.submit_hour <= 23:
            raise ValueError(f"submit_hour out of range: {self.submit_hour}")
        if self.cpu_req < 0 or self.mem_req < 0:
            raise ValueError("resource requests must be nonnegative")


@dataclass(frozen=True)
class Job:
    """One schedulable job: arrival time plus an ordered list of task durations.

    ``stages``, when present, marks the job as a chain of stages that must
    run in order; ``task_durations_ms`` is then the concatenation of the
    stage duration lists.
    """

    id: str
    arrival_ms: int
    task_durations_ms: tuple[int, ...]
    features: JobFeatures
    stages: Optional[tuple[tuple[int, ...], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "task_durations_ms", tuple(self.task_durations_ms))
        if self.stages is not None:
            object.__setattr__(
                self, "stages", tuple(tuple(s) for s in self.stages)
            )
        if self.arrival_ms < 0:
            raise ValueError(f"job {self.id}: negative arrival time")
        if not self.task_durations_ms:
            raise ValueError(f"job {self.id}: no tasks")
        if any(d <= 0 for d in self.task_durations_ms):
            raise ValueError(f"job {self.id}: task durations must be positive")
        if self.stages is not None:
            if not self.stages or any(not s for s in self.stages):
                raise ValueError(f"job {self.id}: empty stage")
            flat = tuple(d for s in self.stages for d in s)
            if flat != self.task_durations_ms:
                raise ValueError(
                    f"job {self.id}: stages do not concatenate to task_durations_ms"
                )

    @property
    def total_ms(self) -> int:
        return sum(self.task_durations_ms)

    @property
    def task_count(self) -> int:
        return len(self.task_durations_ms)


def job_width(job: Job, stage: int = 0) -> int:
    """Number of tasks the scheduler sees for this job.

    For staged (chain) jobs this is the width of the given stage, which the
    caller tracks as execution progresses; plain jobs ignore ``stage``.
    """
    if job.stages is None:
        return len(job.task_durations_ms)
    if not 0 <= stage < len(job.stages):
        raise ValueError(f"job {job.id}: no stage {stage}")
    return len(job.stages[stage])


def is_thin(job: Job, thin_limit: int, stage: int = 0) -> bool:
    """True iff the job's width is strictly under ``thin_limit``."""
    if thin_limit < 1:
        raise ValueError("thin_limit must be >= 1")
    return job_width(job, stage) < thin_limit


@dataclass(frozen=True)
class Prediction:
    """A runtime estimate: mean task length, total runtime, optional max task."""

    mean_task_ms: float
    total_ms: float
    max_task_ms: Optional[float]
    source: PredictionSource

    def __post_init__(self):
        if self.mean_task_ms <= 0:
            raise ValueError("mean_task_ms must be positive")
        if self.total_ms <= 0:
            raise ValueError("total_ms must be positive")
        if self.max_task_ms is not None and self.max_task_ms <= 0:
            raise ValueError("max_task_ms must be positive")

    @classmethod
    def for_width(
        cls,
        mean_task_ms: float,
        width: int,
        max_task_ms: Optional[float],
        source: PredictionSource,
    ) -> "Prediction":
        return cls(mean_task_ms, mean_task_ms * width, max_task_ms, source)

    def to_dict(self) -> dict:
        return {
            "mean_task_ms": self.mean_task_ms,
            "total_ms": self.total_ms,
            "max_task_ms": self.max_task_ms,
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(
            d["mean_task_ms"],
            d["total_ms"],
            d.get("max_task_ms"),
            PredictionSource(d["source"]),
        )


SAMPLING_MODE_FIXED = "fixed"
SAMPLING_MODE_ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class SchedulerConfig:
    """Scheduler and simulation parameters.

    Queue q covers total-runtime estimates in [Q_lo(q), Q_hi(q)) with
    Q_hi(q) = q0_hi_ms * growth_factor**q and the last queue unbounded.
    """

    machines: int
    num_queues: int = 10
    q0_hi_ms: int = 10**6
    growth_factor: float = 10.0
    queue_weight_decay: float = 10.0
    thin_limit: int = 3
    sampling_mode: str = SAMPLING_MODE_ADAPTIVE
    fixed_ratio: float = 0.03
    adaptive_t: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.machines < 1:
            raise ValueError("machines must be >= 1")
        if self.num_queues < 1:
            raise ValueError("num_queues must be >= 1")
        if self.q0_hi_ms < 1:
            raise ValueError("q0_hi_ms must be >= 1")
        if self.growth_factor <= 1:
            raise ValueError("growth_factor must be > 1")
        if self.queue_weight_decay <= 1:
            raise ValueError("queue_weight_decay must be > 1")
        if self.thin_limit < 1:
            raise ValueError("thin_limit must be >= 1")
        if self.sampling_mode not in (SAMPLING_MODE_FIXED, SAMPLING_MODE_ADAPTIVE):
            raise ValueError(f"unknown sampling mode: {self.sampling_mode}")
        if not 0 < self.fixed_ratio <= 1:
            raise ValueError("fixed_ratio must be in (0, 1]")
        if self.adaptive_t < 1:
            raise ValueError("adaptive_t must be >= 1")

    def queue_hi_ms(self, q: int) -> float:
        """Upper threshold of queue q (exclusive); inf for the last queue."""
        if not 0 <= q < self.num_queues:
            raise ValueError(f"no queue {q}")
        if q == self.num_queues - 1:
            return float("inf")
        return self.q0_hi_ms * self.growth_factor**q

    def to_dict(self) -> dict:
        return {
            "machines": self.machines,
            "num_queues": self.num_queues,
            "q0_hi_ms": self.q0_hi_ms,
            "growth_factor": self.growth_factor,
            "queue_weight_decay": self.queue_weight_decay,
            "thin_limit": self.thin_limit,
            "sampling_mode": self.sampling_mode,
            "fixed_ratio": self.fixed_ratio,
            "adaptive_t": self.adaptive_t,
            "seed": self.seed,
        }


class EventKind(IntEnum):
    """Event kinds; the numeric value is the ordering rank at equal times."""

    TASK_FINISH = 0
    JOB_ARRIVAL = 1


@dataclass(frozen=True)
class SimEvent:
    """One discrete event.  Ordering is total: time, kind, job id, task index."""

    time_ms: int
    kind: EventKind
    job_id: str
    task_index: int = -1
    machine: int = -1

    def sort_key(self) -> tuple:
        return (self.time_ms, int(self.kind), self.job_id, self.task_index)

    def __lt__(self, other: "SimEvent") -> bool:
        return self.sort_key() < other.sort_key()

    def to_dict(self) -> dict:
        return {
            "time_ms": self.time_ms,
            "kind": self.kind.name.lower(),
            "job_id": self.job_id,
            "task_index": self.task_index,
            "machine": self.machine,
        }


@dataclass
class JobRecord:
    """Per-job outcome of a simulation run."""

    job_id: str
    arrival_ms: int
    width: int
    task_count: int
    estimate: Optional[Prediction]
    estimate_ready_ms: Optional[int]
    queue_assigned: Optional[int]
    queue_history: list[tuple[int, int]]  # (time_ms, queue index) placements
    task_starts_ms: list[int]
    task_finishes_ms: list[int]
    jct_ms: int
    ratio_used: Optional[float] = None
    pilot_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.task_starts_ms) != len(self.task_finishes_ms):
            raise ValueError(f"job {self.job_id}: start/finish length mismatch")
        if any(s < self.arrival_ms for s in self.task_starts_ms):
            raise ValueError(f"job {self.job_id}: task starts before arrival")
        if self.task_finishes_ms:
            expect = max(self.task_finishes_ms) - self.arrival_ms
            if self.jct_ms != expect:
                raise ValueError(f"job {self.job_id}: jct != last finish - arrival")

    @property
    def task_durations_ms(self) -> list[int]:
        return [f - s for s, f in zip(self.task_starts_ms, self.task_finishes_ms)]

    @property
    def actual_total_ms(self) -> int:
        return sum(self.task_durations_ms)

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "arrival_ms": self.arrival_ms,
            "width": self.width,
            "task_count": self.task_count,
            "estimate": self.estimate.to_dict() if self.estimate else None,
            "estimate_ready_ms": self.estimate_ready_ms,
            "queue_assigned": self.queue_assigned,
            "queue_history": [list(p) for p in self.queue_history],
            "task_starts_ms": list(self.task_starts_ms),
            "task_finishes_ms": list(self.task_finishes_ms),
            "jct_ms": self.jct_ms,
            "ratio_used": self.ratio_used,
            "pilot_indices": list(self.pilot_indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JobRecord":
        return cls(
            job_id=d["job_id"],
            arrival_ms=d["arrival_ms"],
            width=d["width"],
            task_count=d["task_count"],
            estimate=Prediction.from_dict(d["estimate"]) if d["estimate"] else None,
            estimate_ready_ms=d["estimate_ready_ms"],
            queue_assigned=d["queue_assigned"],
            queue_history=[tuple(p) for p in d["queue_history"]],
            task_starts_ms=list(d["task_starts_ms"]),
            task_finishes_ms=list(d["task_finishes_ms"]),
            jct_ms=d["jct_ms"],
            ratio_used=d.get("ratio_used"),
            pilot_indices=tuple(d.get("pilot_indices", ())),
        )


@dataclass
class SimResult:
    """Complete outcome of one simulation run."""

    policy: str
    config: SchedulerConfig
    seed: int
    records: dict[str, JobRecord]
    events: list[SimEvent] = field(default_factory=list)
    machine_busy_ms: list[int] = field(default_factory=list)

    def mean_jct_ms(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.jct_ms for r in self.records.values()) / len(self.records)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "records": {
                k: self.records[k].to_dict() for k in sorted(self.records)
            },
            "events": [e.to_dict() for e in self.events],
            "machine_busy_ms": list(self.machine_busy_ms),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimResult":
        return cls(
            policy=d["policy"],
            config=SchedulerConfig(**d["config"]),
            seed=d["seed"],
            records={k: JobRecord.from_dict(v) for k, v in d["records"].items()},
            events=[
                SimEvent(
                    e["time_ms"],
                    EventKind[e["kind"].upper()],
                    e["job_id"],
                    e["task_index"],
                    e["machine"],
                )
                for e in d["events"]
            ],
            machine_busy_ms=list(d["machine_busy_ms"]),
        )
