"""Per-task smoothed weight-variation bookkeeping and task sampling.

Each task carries an exponential moving average of its raw weight-variation
measurements.  A large value means the model's weights are still moving a
lot when training on that task, i.e. the model is not yet competent there,
so the sampler prefers it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .metrics import softmax_normalize


@dataclass
class CompetenceEntry:
    smoothed: float | None = None
    lagged: float | None = None
    seen: bool = False
    last_step: int | None = None

    def as_dict(self) -> dict:
        return {
            "smoothed": self.smoothed,
            "lagged": self.lagged,
            "seen": self.seen,
            "last_step": self.last_step,
        }


class CompetenceTable:
    """Smoothed variation values for a fixed set of tasks.

    Single-writer: one scheduler loop owns the table; reads for reporting
    may happen between updates.
    """

    def __init__(self, task_ids, smoothing_weight: float):
        if not 0.0 <= smoothing_weight < 1.0:
            raise InvalidInputError("smoothing weight must be in [0, 1)")
        ids = list(task_ids)
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate task ids")
        self.w = float(smoothing_weight)
        self.entries: dict[str, CompetenceEntry] = {t: CompetenceEntry() for t in ids}

    @property
    def task_ids(self) -> list[str]:
        return list(self.entries)

    def entry(self, task: str) -> CompetenceEntry:
        try:
            return self.entries[task]
        except KeyError:
            raise InvalidInputError(f"unknown task {task!r}") from None

    def smooth_update(self, task: str, d_raw: float, step: int | None = None) -> float:
        """Fold a raw variation value into the task's moving average.

        The first observation initializes the average to the raw value;
        afterwards ``new = (1 - w) * d_raw + w * previous``.  The previous
        average is kept as ``lagged`` for the scheduler's switch test.
        Returns the new smoothed value.
        """
        if not math.isfinite(d_raw) or d_raw < 0.0:
            raise InvalidInputError(f"raw variation must be finite and >= 0, got {d_raw!r}")
        e = self.entry(task)
        if e.smoothed is None:
            new = float(d_raw)
        else:
            new = (1.0 - self.w) * float(d_raw) + self.w * e.smoothed
        e.lagged = e.smoothed
        e.smoothed = new
        e.seen = True
        if step is not None:
            e.last_step = int(step)
        return new

    def unseen(self, among=None) -> list[str]:
        tasks = self.task_ids if among is None else list(among)
        return [t for t in tasks if not self.entry(t).seen]

    def as_dict(self) -> dict:
        return {
            "w": self.w,
            "entries": {t: e.as_dict() for t, e in self.entries.items()},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "CompetenceTable":
        table = cls(payload["entries"].keys(), payload["w"])
        for task, e in payload["entries"].items():
            entry = table.entries[task]
            entry.smoothed = e["smoothed"]
            entry.lagged = e["lagged"]
            entry.seen = e["seen"]
            entry.last_step = e["last_step"]
        return table


def sample_next_task(
    table: CompetenceTable,
    current: str,
    all_tasks,
    rng: np.random.Generator,
) -> str:
    """Pick the next training task from ``all_tasks`` minus ``current``.

    While any candidate has never been trained on, the choice is uniform
    among the never-trained ones; once every candidate has been seen the
    choice follows the softmax of their smoothed variation values
    (temperature 1), so less-competent tasks are preferred.
    """
    candidates = [t for t in all_tasks if t != current]
    if not candidates:
        raise InvalidInputError("need at least two tasks to sample a next task")
    if len(set(candidates)) != len(candidates):
        raise InvalidInputError("duplicate task ids in candidate set")

    unseen = [t for t in candidates if not table.entry(t).seen]
    if unseen:
        return unseen[int(rng.integers(len(unseen)))]

    scores = np.array([table.entry(t).smoothed for t in candidates], dtype=np.float64)
    probs = softmax_normalize(scores)
    return candidates[int(rng.choice(len(candidates), p=probs))]
