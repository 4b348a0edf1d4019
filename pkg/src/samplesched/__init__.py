"""Trace-driven cluster scheduling simulator.

Simulates a multi-level priority-queue scheduler over job traces and
compares runtime predictors: task-sampling ("slearn"), history-based
("3sigma" and variants), LAS, FIFO, and an exact oracle.
"""

from samplesched.domain import (
    Job,
    JobFeatures,
    Prediction,
    PredictionSource,
    SchedulerConfig,
    SimResult,
    is_thin,
    job_width,
)

__all__ = [
    "Job",
    "JobFeatures",
    "Prediction",
    "PredictionSource",
    "SchedulerConfig",
    "SimResult",
    "is_thin",
    "job_width",
]
