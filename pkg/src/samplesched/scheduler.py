"""Multi-level priority-queue scheduler with pluggable prediction policies.

Jobs are ordered into exponentially thresholded priority queues by their
estimated total runtime.  Across queues, capacity is shared by a deficit
rule over cumulative served time against exponentially decaying queue
weights; within a queue jobs run FIFO by (arrival, id).  The sampling
policy holds wide jobs in the second-highest queue while their pilot
tasks run, bypasses thin jobs straight to the top queue, and keeps idle
machines busy with not-yet-estimated work (work conservation).
"""

from __future__ import annotations

import random
from bisect import insort
from dataclasses import dataclass, field
from typing import Optional

from samplesched.domain import (
    Job,
    JobRecord,
    Prediction,
    PredictionSource,
    SchedulerConfig,
    is_thin,
    job_width,
)
from samplesched import predictors
from samplesched.predictors import (
    HistoryRecord,
    HistoryStore,
    NoHistoryError,
    SamplerState,
)

POLICY_SLEARN = "slearn"
POLICY_3SIGMA = "3sigma"
POLICY_3SIGMA_TL = "3sigma-tl"
POLICY_POINT_EST = "point-est"
POLICY_LAS = "las"
POLICY_FIFO = "fifo"
POLICY_ORACLE = "oracle"
POLICY_SLEARN_DAG = "slearn-dag"
POLICY_3SIGMA_DAG = "3sigma-dag"

ALL_POLICIES = (
    POLICY_SLEARN,
    POLICY_3SIGMA,
    POLICY_3SIGMA_TL,
    POLICY_POINT_EST,
    POLICY_LAS,
    POLICY_FIFO,
    POLICY_ORACLE,
    POLICY_SLEARN_DAG,
    POLICY_3SIGMA_DAG,
)

SAMPLING_POLICIES = {POLICY_SLEARN, POLICY_SLEARN_DAG}
# Policies that consult the history store and therefore need a warmup prefix.
HISTORY_POLICIES = {
    POLICY_3SIGMA,
    POLICY_3SIGMA_TL,
    POLICY_POINT_EST,
    POLICY_3SIGMA_DAG,
    POLICY_SLEARN_DAG,
}

SAMPLING_QUEUE = 1

# Surplus differences below this are ties (resolved toward the higher
# priority queue).  With a huge weight decay all surpluses collapse within
# the tolerance, so the deficit rule degenerates to strict priority.
SURPLUS_TIE_EPS = 1e-6

PHASE_SAMPLING = "sampling"
PHASE_ESTIMATED = "estimated"
PHASE_THIN_BYPASS = "thin-bypass"
PHASE_DIRECT = "direct"  # queued without an estimate (las, fifo)
PHASE_FINISHED = "finished"


class DuplicateJobError(ValueError):
    pass


class UnknownPolicyError(ValueError):
    pass


def queue_index_for(total_estimate_ms: float, cfg: SchedulerConfig) -> int:
    """Smallest queue whose upper threshold exceeds the estimate."""
    if total_estimate_ms <= 0:
        raise ValueError("estimate must be positive")
    for q in range(cfg.num_queues):
        if total_estimate_ms < cfg.queue_hi_ms(q):
            return q
    return cfg.num_queues - 1


@dataclass
class JobRuntimeState:
    """Mutable per-job scheduling state."""

    job: Job
    phase: str
    pilots: frozenset[int] = frozenset()
    pilots_done: int = 0
    estimate: Optional[Prediction] = None
    estimate_ready_ms: Optional[int] = None
    queue: Optional[int] = None
    queue_assigned: Optional[int] = None
    queue_history: list[tuple[int, int]] = field(default_factory=list)
    current_stage: int = 0
    scheduled: set[int] = field(default_factory=set)
    finished: set[int] = field(default_factory=set)
    task_starts_ms: dict[int, int] = field(default_factory=dict)
    task_finishes_ms: dict[int, int] = field(default_factory=dict)
    ratio_used: Optional[float] = None
    feature_preds: dict[str, float] = field(default_factory=dict)
    stage0_history_mean: Optional[float] = None

    @property
    def entry_key(self) -> tuple[int, str]:
        return (self.job.arrival_ms, self.job.id)

    @property
    def stage_bounds(self) -> list[tuple[int, int]]:
        if self.job.stages is None:
            return [(0, self.job.task_count)]
        bounds, off = [], 0
        for s in self.job.stages:
            bounds.append((off, off + len(s)))
            off += len(s)
        return bounds

    def runnable_range(self) -> tuple[int, int]:
        """Global task-index range of the stage currently allowed to run."""
        return self.stage_bounds[self.current_stage]

    def attained_service_ms(self, now_ms: int) -> int:
        done = sum(self.job.task_durations_ms[i] for i in self.finished)
        running = sum(
            now_ms - self.task_starts_ms[i]
            for i in self.scheduled - self.finished
            if i in self.task_starts_ms
        )
        return done + running

    def all_finished(self) -> bool:
        return len(self.finished) == self.job.task_count

    def fully_scheduled(self) -> bool:
        return len(self.scheduled) == self.job.task_count


class GsScheduler:
    """The scheduler: queue bookkeeping plus per-policy prediction hooks.

    Strictly single-threaded per simulation run; the engine drives it via
    on_job_arrival / on_task_finish / dispatch.
    """

    def __init__(
        self,
        policy: str,
        cfg: SchedulerConfig,
        pilot_rng: Optional[random.Random] = None,
        window_days: int = 14,
    ):
        if policy not in ALL_POLICIES:
            raise UnknownPolicyError(policy)
        if policy in SAMPLING_POLICIES and cfg.num_queues < 2:
            raise ValueError("sampling policies need at least two queues")
        self.policy = policy
        self.cfg = cfg
        self.window_days = window_days
        self.pilot_rng = pilot_rng or random.Random(cfg.seed)
        self.jobs: dict[str, JobRuntimeState] = {}
        self.queues: list[list[tuple[int, str]]] = [
            [] for _ in range(cfg.num_queues)
        ]
        self.served_ms: list[float] = [0.0] * cfg.num_queues
        self.store = HistoryStore() if policy in HISTORY_POLICIES else None
        self.sampler: Optional[SamplerState] = None
        if policy in SAMPLING_POLICIES and cfg.sampling_mode == "adaptive":
            self.sampler = SamplerState(t=cfg.adaptive_t)
        self._estimator = (
            "median" if policy == POLICY_POINT_EST else "utility"
        )

    # -- history warmup -----------------------------------------------------

    def ingest_history(self, jobs: list[Job]) -> None:
        """Load a warmup prefix into the history store as-if executed.

        Each job is booked at completion time arrival + max task duration
        (it would have ended then on an unloaded cluster); insertion replays
        per-feature predictions so rolling errors are trained too.
        """
        if self.store is None:
            return
        synth = sorted(
            jobs, key=lambda j: (j.arrival_ms + max(j.task_durations_ms), j.id)
        )
        for job in synth:
            t = job.arrival_ms + max(job.task_durations_ms)
            preds = predictors.feature_predictions(
                self.store, job, t, self.window_days, self._estimator
            )
            predictors.record_completion(
                self.store, self._history_record(job, t), preds
            )

    @staticmethod
    def _history_record(job: Job, completion_ms: int) -> HistoryRecord:
        durations = job.task_durations_ms
        return HistoryRecord(
            completion_time_ms=completion_ms,
            avg_task_runtime_ms=sum(durations) / len(durations),
            max_task_runtime_ms=float(max(durations)),
            total_runtime_ms=float(sum(durations)),
            features=job.features,
        )

    # -- queue plumbing -----------------------------------------------------

    def _place(self, st: JobRuntimeState, queue: int, now_ms: int) -> None:
        if st.queue is not None:
            self._remove_from_queue(st)
        st.queue = queue
        st.queue_history.append((now_ms, queue))
        if not st.fully_scheduled():
            insort(self.queues[queue], st.entry_key)

    def _remove_from_queue(self, st: JobRuntimeState) -> None:
        if st.queue is None:
            return
        try:
            self.queues[st.queue].remove(st.entry_key)
        except ValueError:
            pass  # already lazily dropped once fully scheduled
        st.queue = None

    def _next_queue_task(self, st: JobRuntimeState) -> Optional[int]:
        """Next task this job may run from its queue position, if any."""
        lo, hi = st.runnable_range()
        if st.phase == PHASE_SAMPLING:
            for i in sorted(st.pilots):
                if lo + i not in st.scheduled:
                    return lo + i
            return None
        for i in range(lo, hi):
            if i not in st.scheduled:
                return i
        return None

    def _next_conservation_task(self, st: JobRuntimeState) -> Optional[int]:
        """Next runnable task regardless of queue residency (idle slots)."""
        lo, hi = st.runnable_range()
        for i in range(lo, hi):
            if i not in st.scheduled:
                return i
        return None

    # -- predictions --------------------------------------------------------

    def _history_mean_task(self, job: Job, now_ms: int) -> tuple[float, Optional[float]]:
        """Mean-task estimate from history, with documented fallbacks.

        Returns (mean_task, max_task or None).  Falls back to the global
        median of completed jobs, then to q0_hi_ms on a cold store.
        """
        try:
            if self.policy == POLICY_POINT_EST:
                pred = predictors.point_estimate_predict(
                    self.store, job, now_ms, self.window_days
                )
            else:
                pred = predictors.three_sigma_predict(
                    self.store, job, now_ms, self.window_days
                )
            return pred.mean_task_ms, pred.max_task_ms
        except NoHistoryError:
            med = self.store.global_median_avg_runtime()
            if med is not None:
                return med, None
            return float(self.cfg.q0_hi_ms), None

    def _history_prediction(self, job: Job, now_ms: int) -> Prediction:
        mean_task, max_task = self._history_mean_task(job, now_ms)
        source = (
            PredictionSource.POINT_ESTIMATE
            if self.policy == POLICY_POINT_EST
            else PredictionSource.HISTORY
        )
        if self.policy == POLICY_3SIGMA_DAG and job.stages is not None:
            total = predictors.three_sigma_dag_estimate(
                [mean_task * len(stage) for stage in job.stages]
            )
        else:
            total = mean_task * job.task_count
        return Prediction(
            mean_task_ms=total / job.task_count,
            total_ms=total,
            max_task_ms=max_task,
            source=source,
        )

    def _pick_ratio(self) -> float:
        if self.sampler is not None:
            return predictors.next_ratio(self.sampler)
        return self.cfg.fixed_ratio

    # -- scheduler hooks ----------------------------------------------------

    def on_job_arrival(self, job: Job, now_ms: int) -> None:
        if job.id in self.jobs:
            raise DuplicateJobError(job.id)
        st = JobRuntimeState(job=job, phase=PHASE_DIRECT)
        self.jobs[job.id] = st

        if self.store is not None:
            # remembered for the rolling-error update at completion
            st.feature_preds = predictors.feature_predictions(
                self.store, job, now_ms, self.window_days, self._estimator
            )

        if self.policy in SAMPLING_POLICIES:
            self._arrive_sampling(st, now_ms)
        elif self.policy in (POLICY_3SIGMA, POLICY_POINT_EST, POLICY_3SIGMA_DAG):
            st.estimate = self._history_prediction(job, now_ms)
            st.estimate_ready_ms = now_ms
            st.phase = PHASE_ESTIMATED
            q = queue_index_for(st.estimate.total_ms, self.cfg)
            st.queue_assigned = q
            self._place(st, q, now_ms)
        elif self.policy == POLICY_3SIGMA_TL:
            st.estimate = self._history_prediction(job, now_ms)
            st.estimate_ready_ms = now_ms
            if is_thin(job, self.cfg.thin_limit):
                st.phase = PHASE_THIN_BYPASS
                st.queue_assigned = 0
                self._place(st, 0, now_ms)
            else:
                st.phase = PHASE_ESTIMATED
                q = queue_index_for(st.estimate.total_ms, self.cfg)
                st.queue_assigned = q
                self._place(st, q, now_ms)
        elif self.policy == POLICY_ORACLE:
            st.estimate = predictors.oracle_predict(job)
            st.estimate_ready_ms = now_ms
            st.phase = PHASE_ESTIMATED
            q = queue_index_for(st.estimate.total_ms, self.cfg)
            st.queue_assigned = q
            self._place(st, q, now_ms)
        elif self.policy in (POLICY_FIFO, POLICY_LAS):
            st.queue_assigned = 0
            self._place(st, 0, now_ms)
        else:  # pragma: no cover - guarded in __init__
            raise UnknownPolicyError(self.policy)

    def _arrive_sampling(self, st: JobRuntimeState, now_ms: int) -> None:
        job = st.job
        if is_thin(job, self.cfg.thin_limit):
            st.phase = PHASE_THIN_BYPASS
            st.queue_assigned = 0
            self._place(st, 0, now_ms)
            return
        ratio = self._pick_ratio()
        st.ratio_used = ratio
        width = job_width(job)
        count = predictors.pilot_count(width, ratio)
        st.pilots = predictors.select_pilots(job, count, self.pilot_rng)
        st.phase = PHASE_SAMPLING
        if self.policy == POLICY_SLEARN_DAG and self.store is not None:
            # first-stage history estimate fixed at arrival for the hybrid
            mean_task, _ = self._history_mean_task(job, now_ms)
            st.stage0_history_mean = mean_task
        self._place(st, SAMPLING_QUEUE, now_ms)

    def on_pilots_complete(self, st: JobRuntimeState, now_ms: int) -> None:
        """All pilots done: estimate, then move to the matching queue."""
        job = st.job
        samples = [float(job.task_durations_ms[i]) for i in sorted(st.pilots)]
        base = predictors.slearn_estimate(samples, job_width(job, 0))
        if self.policy == POLICY_SLEARN_DAG and job.stages is not None:
            st.estimate = self._hybrid_dag_estimate(st, base, samples)
        elif job.stages is None:
            st.estimate = base
        else:
            # plain sampling on a staged job: extrapolate the stage-0 mean
            st.estimate = Prediction.for_width(
                base.mean_task_ms,
                job.task_count,
                base.max_task_ms,
                PredictionSource.SAMPLING,
            )
        st.estimate_ready_ms = now_ms
        st.phase = PHASE_ESTIMATED
        q = queue_index_for(st.estimate.total_ms, self.cfg)
        st.queue_assigned = q
        self._place(st, q, now_ms)

    def _hybrid_dag_estimate(
        self, st: JobRuntimeState, base: Prediction, samples: list[float]
    ) -> Prediction:
        job = st.job
        d_s = base.total_ms
        hist_mean = st.stage0_history_mean
        if hist_mean is None or hist_mean <= 0:
            total = base.mean_task_ms * job.task_count
        else:
            d_h = hist_mean * job_width(job, 0)
            rest = [hist_mean * len(stage) for stage in job.stages[1:]]
            total = predictors.slearn_dag_estimate(d_s, d_h, rest)
        return Prediction.for_width(
            total / job.task_count,
            job.task_count,
            max(samples),
            PredictionSource.SAMPLING,
        )

    def on_task_start(self, job_id: str, task: int, now_ms: int) -> None:
        st = self.jobs[job_id]
        st.scheduled.add(task)
        st.task_starts_ms[task] = now_ms
        if st.fully_scheduled():
            self._remove_from_queue(st)

    def on_task_finish(self, job_id: str, task: int, now_ms: int) -> None:
        st = self.jobs[job_id]
        st.finished.add(task)
        st.task_finishes_ms[task] = now_ms

        if st.phase == PHASE_SAMPLING and task in st.pilots:
            st.pilots_done += 1
            if st.pilots_done == len(st.pilots):
                self.on_pilots_complete(st, now_ms)

        # stage advance: next stage becomes runnable when this one drains
        s_lo, s_hi = st.runnable_range()
        if (
            st.job.stages is not None
            and st.current_stage < len(st.job.stages) - 1
            and all(i in st.finished for i in range(s_lo, s_hi))
        ):
            st.current_stage += 1

        if self.policy == POLICY_LAS and not st.all_finished():
            self._requeue_las(st, now_ms)

        if st.all_finished():
            st.phase = PHASE_FINISHED
            self._remove_from_queue(st)
            self._on_job_complete(st, now_ms)

    def _requeue_las(self, st: JobRuntimeState, now_ms: int) -> None:
        attained = st.attained_service_ms(now_ms)
        if attained <= 0:
            return
        q = queue_index_for(attained, self.cfg)
        if q != st.queue:
            self._place(st, q, now_ms)

    def _on_job_complete(self, st: JobRuntimeState, now_ms: int) -> None:
        job = st.job
        if self.store is not None:
            predictors.record_completion(
                self.store, self._history_record(job, now_ms), st.feature_preds
            )
        if self.sampler is not None and st.ratio_used is not None:
            predictors.score_update(
                self.sampler,
                st.ratio_used,
                now_ms - job.arrival_ms,
                float(job.total_ms),
            )

    # -- dispatch -----------------------------------------------------------

    def _queue_candidates(self) -> dict[int, tuple[str, int]]:
        """For each queue with work: (job id, task index) of its head offer."""
        offers: dict[int, tuple[str, int]] = {}
        for q, entries in enumerate(self.queues):
            drop = []
            for key in entries:
                st = self.jobs[key[1]]
                if st.fully_scheduled():
                    drop.append(key)
                    continue
                task = self._next_queue_task(st)
                if task is not None:
                    offers[q] = (key[1], task)
                    break
            for key in drop:
                entries.remove(key)
        return offers

    def _pick_queue(self, candidates: list[int]) -> int:
        total = sum(self.served_ms)
        best_q, best_surplus = None, None
        weights = [
            self.cfg.queue_weight_decay ** (-q) for q in candidates
        ]
        wsum = sum(weights)
        for q, w in zip(candidates, weights):
            share = self.served_ms[q] / total if total > 0 else 0.0
            surplus = w / wsum - share
            if best_surplus is None or surplus > best_surplus + SURPLUS_TIE_EPS:
                best_q, best_surplus = q, surplus
        return best_q

    def dispatch(
        self, free_machines: list[int], now_ms: int
    ) -> list[tuple[str, int, int]]:
        """Fill free machines: deficit-weighted queue offers, then idle slots.

        Returns (job id, task index, machine) triples; tasks are
        non-preemptive and are booked as started at now_ms.
        """
        assignments: list[tuple[str, int, int]] = []
        machines = list(free_machines)
        while machines:
            offers = self._queue_candidates()
            if not offers:
                break
            q = self._pick_queue(sorted(offers))
            job_id, task = offers[q]
            machine = machines.pop(0)
            self.on_task_start(job_id, task, now_ms)
            self.served_ms[q] += self.jobs[job_id].job.task_durations_ms[task]
            assignments.append((job_id, task, machine))

        if machines:
            # work conservation: earliest-arrived job with any runnable task
            backlog = sorted(
                (
                    st
                    for st in self.jobs.values()
                    if not st.fully_scheduled()
                    and self._next_conservation_task(st) is not None
                ),
                key=lambda st: st.entry_key,
            )
            for st in backlog:
                while machines:
                    task = self._next_conservation_task(st)
                    if task is None:
                        break
                    machine = machines.pop(0)
                    self.on_task_start(st.job.id, task, now_ms)
                    assignments.append((st.job.id, task, machine))
                if not machines:
                    break
        return assignments

    # -- results ------------------------------------------------------------

    def job_record(self, job_id: str) -> JobRecord:
        st = self.jobs[job_id]
        if not st.all_finished():
            raise RuntimeError(f"job {job_id} not finished")
        job = st.job
        starts = [st.task_starts_ms[i] for i in range(job.task_count)]
        finishes = [st.task_finishes_ms[i] for i in range(job.task_count)]
        return JobRecord(
            job_id=job.id,
            arrival_ms=job.arrival_ms,
            width=job_width(job),
            task_count=job.task_count,
            estimate=st.estimate,
            estimate_ready_ms=st.estimate_ready_ms,
            queue_assigned=st.queue_assigned,
            queue_history=list(st.queue_history),
            task_starts_ms=starts,
            task_finishes_ms=finishes,
            jct_ms=max(finishes) - job.arrival_ms,
            ratio_used=st.ratio_used,
            pilot_indices=tuple(sorted(st.pilots)),
        )
