import random

import pytest

from samplesched.domain import Job, JobFeatures, SchedulerConfig


DEFAULT_FEATURES = JobFeatures(
    application="app-0",
    job_name="name-0",
    user="user-0",
    submit_day=2,
    submit_hour=10,
    cpu_req=1.0,
    mem_req=4.0,
)


def mk_job(job_id, durations, arrival=0, features=None, stages=None, **feat_kw):
    if features is None:
        if feat_kw:
            base = DEFAULT_FEATURES
            features = JobFeatures(
                application=feat_kw.get("application", base.application),
                job_name=feat_kw.get("job_name", base.job_name),
                user=feat_kw.get("user", base.user),
                submit_day=feat_kw.get("submit_day", base.submit_day),
                submit_hour=feat_kw.get("submit_hour", base.submit_hour),
                cpu_req=feat_kw.get("cpu_req", base.cpu_req),
                mem_req=feat_kw.get("mem_req", base.mem_req),
            )
        else:
            features = DEFAULT_FEATURES
    return Job(
        id=job_id,
        arrival_ms=arrival,
        task_durations_ms=tuple(durations),
        features=features,
        stages=tuple(tuple(s) for s in stages) if stages is not None else None,
    )


def random_trace(rng: random.Random, n_jobs, max_width=8, max_duration=10**6,
                 staged_fraction=0.0):
    """Random but valid trace, sorted by arrival, unique ids."""
    jobs = []
    t = 0
    for i in range(n_jobs):
        t += rng.randint(0, 50_000)
        width = rng.randint(1, max_width)
        durations = [rng.randint(1, max_duration) for _ in range(width)]
        stages = None
        if width >= 2 and rng.random() < staged_fraction:
            cut = rng.randint(1, width - 1)
            stages = [durations[:cut], durations[cut:]]
        jobs.append(
            mk_job(
                f"job-{i:04d}",
                durations,
                arrival=t,
                stages=stages,
                application=f"app-{rng.randrange(3)}",
                user=f"user-{rng.randrange(3)}",
                job_name=f"name-{rng.randrange(3)}",
            )
        )
    return jobs


@pytest.fixture
def features():
    return DEFAULT_FEATURES


@pytest.fixture
def default_cfg():
    return SchedulerConfig(machines=4, seed=7)
