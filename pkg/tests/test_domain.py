import random

import pytest

from samplesched.domain import (
    EventKind,
    Job,
    JobFeatures,
    Prediction,
    PredictionSource,
    SchedulerConfig,
    SimEvent,
    is_thin,
    job_width,
)
from tests.conftest import mk_job


class TestJobValidation:
    def test_rejects_empty_tasks(self, features):
        with pytest.raises(ValueError):
            Job("j", 0, (), features)

    def test_rejects_nonpositive_duration(self, features):
        with pytest.raises(ValueError):
            Job("j", 0, (10, 0), features)

    def test_rejects_stage_mismatch(self, features):
        with pytest.raises(ValueError):
            Job("j", 0, (1, 2, 3), features, stages=((1, 2), (4,)))

    def test_stages_must_concatenate(self, features):
        job = Job("j", 0, (1, 2, 3), features, stages=((1, 2), (3,)))
        assert job.stages == ((1, 2), (3,))

    def test_feature_ranges(self):
        with pytest.raises(ValueError):
            JobFeatures("a", "n", "u", 7, 0, 1.0, 1.0)
        with pytest.raises(ValueError):
            JobFeatures("a", "n", "u", 0, 24, 1.0, 1.0)


class TestWidth:
    def test_plain_width(self):
        assert job_width(mk_job("j", [1] * 5)) == 5

    def test_single_task(self):
        assert job_width(mk_job("j", [7])) == 1

    def test_staged_width_is_per_stage(self):
        job = mk_job("j", [1] * 11, stages=[[1] * 4, [1] * 7])
        assert job_width(job, 0) == 4
        assert job_width(job, 1) == 7


class TestIsThin:
    def test_width_two_thin_limit_three(self):
        assert is_thin(mk_job("j", [1, 1]), 3) is True

    def test_width_three_is_wide(self):
        assert is_thin(mk_job("j", [1, 1, 1]), 3) is False

    def test_strict_inequality(self):
        assert is_thin(mk_job("j", [1]), 1) is False


class TestPrediction:
    def test_total_matches_mean_times_width(self):
        p = Prediction.for_width(4000.0, 30, 6000.0, PredictionSource.SAMPLING)
        assert p.total_ms == pytest.approx(4000.0 * 30, rel=1e-9)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Prediction(0.0, 1.0, None, PredictionSource.ORACLE)


class TestConfig:
    def test_threshold_geometry(self):
        cfg = SchedulerConfig(machines=1)
        assert cfg.queue_hi_ms(0) == 10**6
        assert cfg.queue_hi_ms(1) == 10**7
        assert cfg.queue_hi_ms(9) == float("inf")

    def test_rejects_bad_growth(self):
        with pytest.raises(ValueError):
            SchedulerConfig(machines=1, growth_factor=1.0)


class TestEventOrdering:
    def test_finish_before_arrival_at_equal_time(self):
        finish = SimEvent(5, EventKind.TASK_FINISH, "j", 0, 0)
        arrival = SimEvent(5, EventKind.JOB_ARRIVAL, "j")
        assert finish < arrival

    def test_total_order_over_permutations(self):
        events = [
            SimEvent(t, k, j, i)
            for t in (0, 1, 2)
            for k in (EventKind.TASK_FINISH, EventKind.JOB_ARRIVAL)
            for j in ("a", "b")
            for i in (-1, 0, 1)
        ]
        rng = random.Random(13)
        reference = sorted(events)
        for _ in range(25):
            shuffled = events[:]
            rng.shuffle(shuffled)
            assert sorted(shuffled) == reference
