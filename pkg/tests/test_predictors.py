import random
import statistics

import numpy as np
import pytest

from samplesched.domain import JobFeatures, PredictionSource
from samplesched.predictors import (
    EmptyDagError,
    EmptyDistributionError,
    HistoryRecord,
    HistoryStore,
    InvalidPilotCountError,
    NoHistoryError,
    NonMonotoneHistoryError,
    NoSamplesError,
    SamplerState,
    DegenerateHistoryError,
    FEATURES,
    feature_predictions,
    next_ratio,
    oracle_predict,
    pilot_count,
    point_estimate_predict,
    record_completion,
    score_update,
    select_pilots,
    slearn_dag_estimate,
    slearn_estimate,
    three_sigma_dag_estimate,
    three_sigma_predict,
    utility_point_estimate,
)
from tests.conftest import mk_job


class TestPilotCount:
    def test_three_percent_of_hundred(self):
        assert pilot_count(100, 0.03) == 3

    def test_clamps_to_at_least_one(self):
        assert pilot_count(10, 0.03) == 1

    def test_ceiling(self):
        assert pilot_count(150, 0.05) == 8

    def test_never_exceeds_width(self):
        assert pilot_count(2, 1.0) == 2

    def test_exact_product_does_not_round_up(self):
        # 0.02 * 50 is 1.0000000000000002 in floats; must stay 1
        assert pilot_count(50, 0.02) == 1


class TestSelectPilots:
    def test_full_set(self):
        job = mk_job("j", [1] * 5)
        got = select_pilots(job, 5, random.Random(3))
        assert got == frozenset(range(5))

    def test_deterministic_for_seed(self):
        job = mk_job("j", [1] * 100)
        a = select_pilots(job, 3, random.Random(42))
        b = select_pilots(job, 3, random.Random(42))
        assert a == b and len(a) == 3

    def test_count_above_width_rejected(self):
        with pytest.raises(InvalidPilotCountError):
            select_pilots(mk_job("j", [1, 1]), 3, random.Random(0))


class TestSlearnEstimate:
    def test_mean_total_max(self):
        p = slearn_estimate([2000, 4000, 6000], 30)
        assert p.mean_task_ms == pytest.approx(4000)
        assert p.total_ms == pytest.approx(120_000)
        assert p.max_task_ms == pytest.approx(6000)
        assert p.source is PredictionSource.SAMPLING

    def test_single_sample(self):
        p = slearn_estimate([7000], 1)
        assert (p.mean_task_ms, p.total_ms, p.max_task_ms) == (7000, 7000, 7000)

    def test_empty_rejected(self):
        with pytest.raises(NoSamplesError):
            slearn_estimate([], 5)

    def test_all_tasks_sampled_equals_oracle(self):
        rng = random.Random(11)
        for _ in range(50):
            durations = [rng.randint(1, 10**6) for _ in range(rng.randint(1, 20))]
            job = mk_job("j", durations)
            sampled = slearn_estimate([float(d) for d in durations], len(durations))
            exact = oracle_predict(job)
            assert sampled.mean_task_ms == pytest.approx(exact.mean_task_ms)
            assert sampled.total_ms == pytest.approx(exact.total_ms)
            assert sampled.max_task_ms == pytest.approx(exact.max_task_ms)

    def test_zero_skew_is_exact_for_any_subset(self):
        rng = random.Random(12)
        durations = [5000] * 40
        for _ in range(20):
            k = rng.randint(1, 40)
            subset = rng.sample(durations, k)
            p = slearn_estimate(subset, 40)
            assert p.total_ms == pytest.approx(sum(durations))


class TestUtilityPointEstimate:
    def test_degenerate(self):
        assert utility_point_estimate([(10.0, 1.0)]) == pytest.approx(10.0)

    def test_two_point(self):
        # grid argmin of sum p*(c-a)^2/a^2 over [1, 20] lands on 6
        assert utility_point_estimate([(5.0, 0.5), (10.0, 0.5)]) == pytest.approx(6.0)

    def test_small_values_dominate(self):
        got = utility_point_estimate([(1.0, 0.9), (100.0, 0.1)])
        assert got == pytest.approx(1.00109, abs=1e-4)

    def test_empty_rejected(self):
        with pytest.raises(EmptyDistributionError):
            utility_point_estimate([])

    def test_bad_probability_mass_rejected(self):
        with pytest.raises(ValueError):
            utility_point_estimate([(5.0, 0.6), (10.0, 0.6)])


def _record(t, avg, features, max_scale=2.0):
    return HistoryRecord(
        completion_time_ms=t,
        avg_task_runtime_ms=avg,
        max_task_runtime_ms=avg * max_scale,
        total_runtime_ms=avg * 4,
        features=features,
    )


class TestHistoryStore:
    def test_insert_populates_all_six_indexes(self, features):
        store = HistoryStore()
        record_completion(store, _record(10, 100.0, features))
        for feature in FEATURES:
            lists = store.index[feature]
            assert len(lists) == 1
            assert sum(len(v) for v in lists.values()) == 1

    def test_rolling_error_update(self, features):
        store = HistoryStore(alpha=0.1)
        record_completion(
            store, _record(10, 100.0, features), {"user": 120.0}
        )
        assert store.rolling_error["user"] == pytest.approx(0.02)
        assert store.rolling_error["application"] == 0.0

    def test_non_monotone_insert_rejected(self, features):
        store = HistoryStore()
        record_completion(store, _record(10, 100.0, features))
        with pytest.raises(NonMonotoneHistoryError):
            record_completion(store, _record(9, 100.0, features))


class TestThreeSigmaPredict:
    def test_degenerate_histogram(self, features):
        store = HistoryStore()
        for t in (10, 20, 30):
            record_completion(store, _record(t, 10_000.0, features))
        job = mk_job("j", [1] * 6, arrival=100)
        pred = three_sigma_predict(store, job, 100, 14)
        assert pred.mean_task_ms == pytest.approx(10_000.0)
        assert pred.total_ms == pytest.approx(60_000.0)
        assert pred.source is PredictionSource.HISTORY

    def test_feature_with_least_rolling_error_wins(self, features):
        other = JobFeatures("app-9", "name-0", "user-0", 2, 10, 1.0, 4.0)
        store = HistoryStore()
        # application index sees only 200; user index sees 200 then 800
        record_completion(store, _record(10, 200.0, features))
        record_completion(store, _record(20, 800.0, other))
        job = mk_job("j", [1] * 4)  # matches application of the first only
        for feature in FEATURES:
            store.rolling_error[feature] = 0.5
        store.rolling_error["application"] = 0.2
        pred = three_sigma_predict(store, job, 100, 14)
        assert pred.mean_task_ms == pytest.approx(200.0)

    def test_empty_store_raises(self, features):
        with pytest.raises(NoHistoryError):
            three_sigma_predict(HistoryStore(), mk_job("j", [1]), 100, 14)

    def test_window_excludes_stale_records(self, features):
        store = HistoryStore()
        record_completion(store, _record(0, 100.0, features))
        job = mk_job("j", [1])
        # 15 days later the 14-day window no longer covers the record
        with pytest.raises(NoHistoryError):
            three_sigma_predict(store, job, 15 * 86_400_000, 14)

    def test_deterministic(self, features):
        store = HistoryStore()
        for t in (10, 20, 30):
            record_completion(store, _record(t, t * 10.0, features))
        job = mk_job("j", [1] * 3, arrival=50)
        first = three_sigma_predict(store, job, 50, 14)
        for _ in range(5):
            again = three_sigma_predict(store, job, 50, 14)
            assert again == first


class TestPointEstimate:
    def test_odd_median(self, features):
        store = HistoryStore()
        for t, avg in ((10, 5.0), (20, 10.0), (30, 100.0)):
            record_completion(store, _record(t, avg, features))
        pred = point_estimate_predict(store, mk_job("j", [1]), 100, 14)
        assert pred.mean_task_ms == pytest.approx(10.0)
        assert pred.source is PredictionSource.POINT_ESTIMATE

    def test_even_median_is_midpoint(self, features):
        store = HistoryStore()
        for t, avg in ((10, 4.0), (20, 8.0)):
            record_completion(store, _record(t, avg, features))
        pred = point_estimate_predict(store, mk_job("j", [1]), 100, 14)
        assert pred.mean_task_ms == pytest.approx(6.0)

    def test_empty_store_raises(self):
        with pytest.raises(NoHistoryError):
            point_estimate_predict(HistoryStore(), mk_job("j", [1]), 100, 14)


class TestOracle:
    def test_two_tasks(self):
        p = oracle_predict(mk_job("j", [1000, 3000]))
        assert (p.mean_task_ms, p.total_ms, p.max_task_ms) == (2000, 4000, 3000)
        assert p.source is PredictionSource.ORACLE

    def test_single_task(self):
        p = oracle_predict(mk_job("j", [500]))
        assert (p.mean_task_ms, p.total_ms, p.max_task_ms) == (500, 500, 500)

    def test_uniform_tasks(self):
        assert oracle_predict(mk_job("j", [10] * 7)).total_ms == 70


class TestAdaptiveSampler:
    def test_warmup_order(self):
        state = SamplerState(t=100)
        assert next_ratio(state) == 0.02

    def test_no_exploration_when_middle_wins(self):
        state = SamplerState(t=1)
        for _ in range(3):
            next_ratio(state)
        score_update(state, 0.02, 1.5, 1.0)
        score_update(state, 0.03, 1.2, 1.0)
        score_update(state, 0.04, 1.4, 1.0)
        assert next_ratio(state) == 0.03

    def test_downward_exploration_trigger(self):
        state = SamplerState(t=1)
        for _ in range(3):
            next_ratio(state)
        score_update(state, 0.02, 1.0, 1.0)
        score_update(state, 0.03, 1.2, 1.0)
        score_update(state, 0.04, 1.4, 1.0)
        assert next_ratio(state) == 0.01

    def test_score_mean(self):
        state = SamplerState(t=10)
        score_update(state, 0.03, 2.0, 1.0)
        score_update(state, 0.03, 4.0, 1.0)
        assert state.score(0.03) == pytest.approx(3.0)

    def test_ring_eviction(self):
        state = SamplerState(t=2)
        for v in (1.0, 3.0, 5.0):
            score_update(state, 0.02, v, 1.0)
        assert state.buffers[0.02] == [3.0, 5.0]
        assert state.score(0.02) == pytest.approx(4.0)

    def test_first_update_sets_score(self):
        state = SamplerState(t=3)
        score_update(state, 0.05, 1.7, 1.0)
        assert state.score(0.05) == pytest.approx(1.7)


class TestDagEstimates:
    def test_hybrid_adjustment(self):
        assert slearn_dag_estimate(100.0, 50.0, [200.0, 300.0]) == pytest.approx(1100.0)

    def test_ratio_one_reduces_to_sum(self):
        assert slearn_dag_estimate(80.0, 80.0, [20.0]) == pytest.approx(100.0)

    def test_uniform_history_bias_cancels(self):
        rng = random.Random(17)
        for _ in range(100):
            true_stages = [rng.uniform(10, 1000) for _ in range(rng.randint(2, 5))]
            k = rng.uniform(0.01, 100.0)
            d_s = true_stages[0]  # exact sampling of the first stage
            d_h = true_stages[0] * k
            rest = [v * k for v in true_stages[1:]]
            got = slearn_dag_estimate(d_s, d_h, rest)
            assert got == pytest.approx(sum(true_stages), rel=1e-12)

    def test_degenerate_history(self):
        with pytest.raises(DegenerateHistoryError):
            slearn_dag_estimate(100.0, 0.0, [10.0])

    def test_stage_sum(self):
        assert three_sigma_dag_estimate([100.0, 200.0]) == pytest.approx(300.0)
        assert three_sigma_dag_estimate([7.0]) == pytest.approx(7.0)

    def test_empty_dag(self):
        with pytest.raises(EmptyDagError):
            three_sigma_dag_estimate([])


class TestFeaturePredictions:
    def test_only_matching_features_present(self, features):
        store = HistoryStore()
        record_completion(store, _record(10, 50.0, features))
        odd = JobFeatures("other-app", "name-0", "user-9", 1, 3, 9.0, 9.0)
        job = mk_job("j", [1], features=odd)
        preds = feature_predictions(store, job, 100, 14)
        assert set(preds) == {"job_name"}
        assert preds["job_name"] == pytest.approx(50.0)
