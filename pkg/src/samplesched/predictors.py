"""Job runtime predictors and the adaptive sampling-ratio controller.

Four families live here:

* sampling: pick pilot tasks, estimate from their observed durations;
* history: a feature-indexed store of completed jobs with a
  utility-weighted point estimate ("3sigma"-style) and a plain median
  variant;
* oracle: exact statistics straight from the trace;
* staged-job hybrids: correct history estimates of later stages with the
  sampled-over-history ratio of the first stage, or plain stage summation.
"""

from __future__ import annotations

import math
import random
import statistics
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Optional, Sequence

from samplesched.domain import Job, JobFeatures, Prediction, PredictionSource

MS_PER_DAY = 86_400_000

# The six features history predictors match on.  Day and hour of submission
# are separate features; cpu and memory requests form one composite value.
FEATURES = (
    "application",
    "job_name",
    "user",
    "submit_day",
    "submit_hour",
    "resources",
)


class InvalidPilotCountError(ValueError):
    pass


class NoSamplesError(ValueError):
    pass


class EmptyDistributionError(ValueError):
    pass


class NoHistoryError(LookupError):
    """No feature has a matching record; caller must fall back."""


class NonMonotoneHistoryError(ValueError):
    pass


class DegenerateHistoryError(ValueError):
    pass


class EmptyDagError(ValueError):
    pass


def feature_value(features: JobFeatures, feature: str) -> str:
    """String key a job contributes to / looks up in a feature index."""
    if feature == "application":
        return features.application
    if feature == "job_name":
        return features.job_name
    if feature == "user":
        return features.user
    if feature == "submit_day":
        return str(features.submit_day)
    if feature == "submit_hour":
        return str(features.submit_hour)
    if feature == "resources":
        return f"{features.cpu_req}:{features.mem_req}"
    raise KeyError(feature)


# ---------------------------------------------------------------------------
# sampling-based prediction
# ---------------------------------------------------------------------------


def pilot_count(width: int, ratio: float) -> int:
    """Number of pilot tasks for a job of the given width.

    max(1, ceil(ratio * width)), never more than the width itself.  The
    small slack keeps float products like 0.02 * 50 from ceiling to 2.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    count = max(1, math.ceil(ratio * width - 1e-9))
    return min(count, width)


def select_pilots(job: Job, count: int, rng: random.Random, stage: int = 0) -> frozenset[int]:
    """Uniformly random pilot task indices within the (first) stage."""
    width = len(job.task_durations_ms) if job.stages is None else len(job.stages[stage])
    if not 1 <= count <= width:
        raise InvalidPilotCountError(
            f"job {job.id}: cannot pick {count} pilots from {width} tasks"
        )
    return frozenset(rng.sample(range(width), count))


def slearn_estimate(sampled_durations_ms: Sequence[float], width: int) -> Prediction:
    """Estimate from observed pilot durations: empirical mean scaled by width."""
    if not sampled_durations_ms:
        raise NoSamplesError("cannot estimate from zero samples")
    if width < len(sampled_durations_ms):
        raise ValueError("width smaller than sample count")
    mean = sum(sampled_durations_ms) / len(sampled_durations_ms)
    return Prediction(
        mean_task_ms=mean,
        total_ms=mean * width,
        max_task_ms=max(sampled_durations_ms),
        source=PredictionSource.SAMPLING,
    )


# ---------------------------------------------------------------------------
# history-based prediction
# ---------------------------------------------------------------------------


def utility_point_estimate(histogram: Sequence[tuple[float, float]]) -> float:
    """Point estimate minimizing squared error weighted by 1/runtime^2.

    For penalty sum_i p_i * (c - a_i)^2 / a_i^2 the minimizer is
    c* = (sum p_i/a_i) / (sum p_i/a_i^2); small runtimes dominate, which is
    the right bias when the goal is average-completion-time scheduling.
    """
    if not histogram:
        raise EmptyDistributionError("empty runtime distribution")
    total_prob = sum(p for _, p in histogram)
    if abs(total_prob - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {total_prob}, not 1")
    if any(v <= 0 for v, _ in histogram):
        raise ValueError("runtime values must be positive")
    num = sum(p / v for v, p in histogram)
    den = sum(p / (v * v) for v, p in histogram)
    return num / den


@dataclass(frozen=True)
class HistoryRecord:
    """Summary of one completed job as seen by history predictors."""

    completion_time_ms: int
    avg_task_runtime_ms: float
    max_task_runtime_ms: float
    total_runtime_ms: float
    features: JobFeatures

    def __post_init__(self):
        if not self.avg_task_runtime_ms > 0:
            raise ValueError("avg task runtime must be positive")
        if self.max_task_runtime_ms < self.avg_task_runtime_ms:
            raise ValueError("max task runtime below average")


class HistoryStore:
    """Per-feature, time-ordered index of completed-job statistics.

    Each feature also carries an exponentially weighted mean absolute
    percentage error of its own past predictions; feature selection picks
    the feature with the smallest rolling error.
    """

    def __init__(self, alpha: float = 0.2):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.index: dict[str, dict[str, list[HistoryRecord]]] = {
            f: {} for f in FEATURES
        }
        self.rolling_error: dict[str, float] = {f: 0.0 for f in FEATURES}
        self.records: list[HistoryRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last_completion_ms(self) -> Optional[int]:
        return self.records[-1].completion_time_ms if self.records else None

    def matching(
        self, feature: str, value: str, now_ms: int, window_days: int
    ) -> list[HistoryRecord]:
        """Records with this feature value completed in [now - window, now)."""
        rows = self.index[feature].get(value, [])
        lo = now_ms - window_days * MS_PER_DAY
        times = [r.completion_time_ms for r in rows]
        return rows[bisect_left(times, lo) : bisect_left(times, now_ms)]

    def global_median_avg_runtime(self) -> Optional[float]:
        """Median avg task runtime over everything ever recorded."""
        if not self.records:
            return None
        return statistics.median(r.avg_task_runtime_ms for r in self.records)


def record_completion(
    store: HistoryStore,
    record: HistoryRecord,
    predicted_by_feature: Optional[dict[str, float]] = None,
) -> None:
    """Append a completed job to every feature index and update rolling errors.

    Insertion must be monotone in completion time.  Rolling errors update
    only for features present in ``predicted_by_feature``, each against the
    prediction that feature itself made for this job.
    """
    last = store.last_completion_ms
    if last is not None and record.completion_time_ms < last:
        raise NonMonotoneHistoryError(
            f"completion at {record.completion_time_ms} before last {last}"
        )
    store.records.append(record)
    for feature in FEATURES:
        value = feature_value(record.features, feature)
        store.index[feature].setdefault(value, []).append(record)
    if predicted_by_feature:
        actual = record.avg_task_runtime_ms
        for feature, pred in predicted_by_feature.items():
            err = abs(pred - actual) / actual
            store.rolling_error[feature] = (
                1.0 - store.alpha
            ) * store.rolling_error[feature] + store.alpha * err


def feature_predictions(
    store: HistoryStore,
    job: Job,
    now_ms: int,
    window_days: int,
    estimator: str = "utility",
) -> dict[str, float]:
    """Mean-task prediction each feature would make for this job, if any."""
    preds: dict[str, float] = {}
    for feature in FEATURES:
        rows = store.matching(
            feature, feature_value(job.features, feature), now_ms, window_days
        )
        if not rows:
            continue
        avgs = [r.avg_task_runtime_ms for r in rows]
        if estimator == "utility":
            p = 1.0 / len(avgs)
            preds[feature] = utility_point_estimate([(a, p) for a in avgs])
        elif estimator == "median":
            preds[feature] = statistics.median(avgs)
        else:
            raise ValueError(f"unknown estimator: {estimator}")
    return preds


def _select_feature(store: HistoryStore, candidates: Sequence[str]) -> str:
    # smallest rolling error; ties resolve in fixed feature order
    return min(candidates, key=lambda f: (store.rolling_error[f], FEATURES.index(f)))


def _history_predict(
    store: HistoryStore,
    job: Job,
    now_ms: int,
    window_days: int,
    estimator: str,
    source: PredictionSource,
) -> Prediction:
    preds = feature_predictions(store, job, now_ms, window_days, estimator)
    if not preds:
        raise NoHistoryError(f"no feature of job {job.id} has matching history")
    feature = _select_feature(store, list(preds))
    rows = store.matching(
        feature, feature_value(job.features, feature), now_ms, window_days
    )
    mean_task = preds[feature]
    width = job.task_count
    return Prediction(
        mean_task_ms=mean_task,
        total_ms=mean_task * width,
        max_task_ms=max(r.max_task_runtime_ms for r in rows),
        source=source,
    )


def three_sigma_predict(
    store: HistoryStore, job: Job, now_ms: int, window_days: int
) -> Prediction:
    """Distribution-based history prediction over the best-scoring feature."""
    return _history_predict(
        store, job, now_ms, window_days, "utility", PredictionSource.HISTORY
    )


def point_estimate_predict(
    store: HistoryStore, job: Job, now_ms: int, window_days: int
) -> Prediction:
    """Like three_sigma_predict but takes the median of matching runtimes."""
    return _history_predict(
        store, job, now_ms, window_days, "median", PredictionSource.POINT_ESTIMATE
    )


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def oracle_predict(job: Job) -> Prediction:
    """Exact mean/total/max from the trace itself."""
    total = job.total_ms
    return Prediction(
        mean_task_ms=total / job.task_count,
        total_ms=float(total),
        max_task_ms=float(max(job.task_durations_ms)),
        source=PredictionSource.ORACLE,
    )


# ---------------------------------------------------------------------------
# adaptive sampling-ratio controller
# ---------------------------------------------------------------------------

RATIO_GRID = (0.01, 0.02, 0.03, 0.04, 0.05)
WARMUP_RATIOS = (0.02, 0.03, 0.04)

PHASE_WARMUP = "warmup"
PHASE_EXPLORE = "explore"
PHASE_STEADY = "steady"


@dataclass
class SamplerState:
    """Running scores per sampling ratio, from the last T finished jobs each."""

    t: int
    jobs_assigned: int = 0
    buffers: dict[float, list[float]] = field(
        default_factory=lambda: {r: [] for r in RATIO_GRID}
    )
    explore_plan: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("T must be >= 1")

    def score(self, ratio: float) -> Optional[float]:
        buf = self.buffers[ratio]
        return sum(buf) / len(buf) if buf else None

    @property
    def phase(self) -> str:
        if self.jobs_assigned < 3 * self.t:
            return PHASE_WARMUP
        if self.explore_plan is None:
            return PHASE_EXPLORE  # plan not decided yet: first post-warmup call
        if self.jobs_assigned < (3 + len(self.explore_plan)) * self.t:
            return PHASE_EXPLORE
        return PHASE_STEADY


def _scored_better(state: SamplerState, a: float, b: float) -> bool:
    sa, sb = state.score(a), state.score(b)
    return sa is not None and sb is not None and sa < sb


def next_ratio(state: SamplerState) -> float:
    """Sampling ratio for the next job; advances the controller one job.

    Warmup tries 2%, 3%, 4% for T jobs each.  If stepping down to 2% (up
    to 4%) improved the normalized JCT over 3%, the edge ratio 1% (5%) is
    tried for T jobs too.  Afterwards every job uses the ratio with the
    lowest running score, ties to the smaller ratio.
    """
    i = state.jobs_assigned
    state.jobs_assigned += 1
    t = state.t
    if i < 3 * t:
        return WARMUP_RATIOS[i // t]
    if state.explore_plan is None:
        # decided once, on the first post-warmup job, from scores so far
        plan = []
        if _scored_better(state, 0.02, 0.03):
            plan.append(0.01)
        if _scored_better(state, 0.04, 0.03):
            plan.append(0.05)
        state.explore_plan = tuple(plan)
    k = i - 3 * t
    if k < len(state.explore_plan) * t:
        return state.explore_plan[k // t]
    scored = [r for r in RATIO_GRID if state.score(r) is not None]
    if not scored:
        return 0.03  # nothing finished yet; stay in the middle of the grid
    return min(scored, key=lambda r: (state.score(r), r))


def score_update(
    state: SamplerState, ratio: float, jct_ms: float, total_job_runtime_ms: float
) -> None:
    """Record one finished job's normalized JCT for the ratio it used."""
    if total_job_runtime_ms <= 0:
        raise ValueError("total job runtime must be positive")
    buf = state.buffers[ratio]
    buf.append(jct_ms / total_job_runtime_ms)
    if len(buf) > state.t:
        del buf[0]


# ---------------------------------------------------------------------------
# staged (chain) jobs
# ---------------------------------------------------------------------------


def slearn_dag_estimate(
    d_s: float, d_h: float, remaining_history_estimates: Sequence[float]
) -> float:
    """Hybrid total: sampled first stage plus ratio-adjusted history stages.

    The first stage's sampled estimate d_s over its history estimate d_h
    gives an adjustment ratio; later-stage history estimates are scaled by
    it, so a uniform history bias cancels out exactly.
    """
    if d_h <= 0:
        raise DegenerateHistoryError("history estimate of the first stage is zero")
    if d_s <= 0:
        raise ValueError("sampled estimate must be positive")
    return d_s + (d_s / d_h) * sum(remaining_history_estimates)


def three_sigma_dag_estimate(stage_estimates: Sequence[float]) -> float:
    """History-only total for a staged job: plain stage summation."""
    if not stage_estimates:
        raise EmptyDagError("no stages")
    return float(sum(stage_estimates))
