"""Deterministic discrete-event loop driving the scheduler.

Events are totally ordered (time, kind, job id, task index) with task
finishes ahead of arrivals at equal times, so freed capacity is visible
to same-instant arrivals.  All events sharing a timestamp are applied
before machines are (re)filled, so a burst of arrivals is scheduled by
priority rather than by event order.  Tasks occupy exactly their trace
duration; there is no modeled overhead.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Optional

from samplesched.domain import (
    EventKind,
    Job,
    SchedulerConfig,
    SimEvent,
    SimResult,
)
from samplesched.scheduler import GsScheduler


class NoMoreEventsError(RuntimeError):
    pass


class UnsortedTraceError(ValueError):
    pass


class DuplicateJobError(ValueError):
    pass


def substream(seed: int, name: str) -> random.Random:
    """Independent deterministic RNG stream derived from the run seed."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass
class ClusterState:
    """Mutable world state of one simulation run."""

    scheduler: GsScheduler
    jobs_by_id: dict[str, Job]
    clock_ms: int = 0
    heap: list[tuple] = field(default_factory=list)
    machine_task: list[Optional[tuple[str, int]]] = field(default_factory=list)
    machine_busy_ms: list[int] = field(default_factory=list)
    events_processed: list[SimEvent] = field(default_factory=list)
    pending_finish: set[tuple[str, int]] = field(default_factory=set)

    def push(self, event: SimEvent) -> None:
        if event.kind == EventKind.TASK_FINISH:
            key = (event.job_id, event.task_index)
            if key in self.pending_finish:
                raise ValueError(f"duplicate finish event for {key}")
            self.pending_finish.add(key)
        heapq.heappush(self.heap, (event.sort_key(), event))

    def free_machines(self) -> list[int]:
        return [i for i, m in enumerate(self.machine_task) if m is None]


def _start_tasks(state: ClusterState, assignments: list[tuple[str, int, int]]) -> None:
    for job_id, task, machine in assignments:
        if state.machine_task[machine] is not None:
            raise RuntimeError(f"machine {machine} already busy")
        duration = state.jobs_by_id[job_id].task_durations_ms[task]
        state.machine_task[machine] = (job_id, task)
        state.machine_busy_ms[machine] += duration
        state.push(
            SimEvent(
                time_ms=state.clock_ms + duration,
                kind=EventKind.TASK_FINISH,
                job_id=job_id,
                task_index=task,
                machine=machine,
            )
        )


def step(state: ClusterState) -> SimEvent:
    """Process the least event; dispatch once its time cohort is exhausted."""
    if not state.heap:
        raise NoMoreEventsError("event heap is empty")
    _, event = heapq.heappop(state.heap)
    if event.time_ms < state.clock_ms:
        raise RuntimeError("clock went backwards")
    state.clock_ms = event.time_ms
    state.events_processed.append(event)

    if event.kind == EventKind.TASK_FINISH:
        state.machine_task[event.machine] = None
        state.pending_finish.discard((event.job_id, event.task_index))
        state.scheduler.on_task_finish(event.job_id, event.task_index, state.clock_ms)
    else:
        state.scheduler.on_job_arrival(
            state.jobs_by_id[event.job_id], state.clock_ms
        )

    if not state.heap or state.heap[0][1].time_ms > state.clock_ms:
        assignments = state.scheduler.dispatch(state.free_machines(), state.clock_ms)
        _start_tasks(state, assignments)
    return event


def run(
    trace: list[Job],
    policy: str,
    cfg: SchedulerConfig,
    history_jobs: Optional[list[Job]] = None,
    window_days: int = 14,
) -> SimResult:
    """Replay a trace under one policy and return the complete result."""
    for a, b in zip(trace, trace[1:]):
        if b.arrival_ms < a.arrival_ms:
            raise UnsortedTraceError(
                f"job {b.id} arrives before predecessor {a.id}"
            )
    ids = [j.id for j in trace]
    if len(set(ids)) != len(ids):
        raise DuplicateJobError("trace contains duplicate job ids")

    sched = GsScheduler(
        policy, cfg, pilot_rng=substream(cfg.seed, "pilots"), window_days=window_days
    )
    if history_jobs:
        sched.ingest_history(history_jobs)

    state = ClusterState(
        scheduler=sched,
        jobs_by_id={j.id: j for j in trace},
        machine_task=[None] * cfg.machines,
        machine_busy_ms=[0] * cfg.machines,
    )
    for job in trace:
        state.push(
            SimEvent(
                time_ms=job.arrival_ms,
                kind=EventKind.JOB_ARRIVAL,
                job_id=job.id,
            )
        )
    while state.heap:
        step(state)

    records = {j.id: sched.job_record(j.id) for j in trace}
    return SimResult(
        policy=policy,
        config=cfg,
        seed=cfg.seed,
        records=records,
        events=state.events_processed,
        machine_busy_ms=state.machine_busy_ms,
    )
