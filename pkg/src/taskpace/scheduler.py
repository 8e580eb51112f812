"""Task-switching strategies for multitask training.

Three strategies are supported:

* ``self-paced`` — after every optimizer update, compare the current
  task's smoothed weight variation against its previous value; when the
  variation stops growing (``now < alpha * prev``) the model is considered
  competent enough and the next task is sampled from the competence table.
  A freshly entered task is always trained for at least two updates, so
  both compared values reflect same-task training.
* ``alternation`` — fixed cyclic rotation through the task list, one
  update per task.
* ``shuffled`` — no current task at all; every batch mixes examples drawn
  uniformly across tasks (the batch-level realization of upsampling all
  tasks to a common size and shuffling).

An optional warmup gate restricts scheduling to high-resource tasks while
the learning-rate warmup is still running, which emulates pre-training on
the large task before the small ones join.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .competence import CompetenceTable, sample_next_task
from .errors import InternalStateError, InvalidInputError

STRATEGIES = ("self-paced", "alternation", "shuffled")
TRIGGERS = ("initial", "variation-decrease", "alternation-cycle", "warmup-end")


@dataclass(frozen=True)
class ScheduleEvent:
    """A task change: the decision was made at ``step``; the new task
    takes effect at ``step + 1``.  The initial selection uses step 0."""

    step: int
    from_task: str
    to_task: str
    trigger: str

    def __post_init__(self):
        if self.trigger not in TRIGGERS:
            raise InvalidInputError(f"unknown trigger {self.trigger!r}")
        if self.trigger != "initial" and self.from_task == self.to_task:
            raise InvalidInputError("non-initial events must change the task")

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "from_task": self.from_task,
            "to_task": self.to_task,
            "trigger": self.trigger,
        }


@dataclass
class SchedulerState:
    current_task: str
    strategy: str = "self-paced"
    alpha: float = 1.0
    changed_task: bool = True
    steps_on_task: int = 0
    hrl_warmup: bool = False
    warmup_steps: int = 200
    # True when the previous decision's candidate set was restricted by the
    # warmup gate; used to tag the first post-gate switch as "warmup-end".
    gate_was_active: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidInputError(f"unknown strategy {self.strategy!r}")
        if self.alpha <= 0.0:
            raise InvalidInputError("alpha must be positive")
        if self.warmup_steps < 1:
            raise InvalidInputError("warmup_steps must be positive")

    def as_dict(self) -> dict:
        return {
            "current_task": self.current_task,
            "strategy": self.strategy,
            "alpha": self.alpha,
            "changed_task": self.changed_task,
            "steps_on_task": self.steps_on_task,
            "hrl_warmup": self.hrl_warmup,
            "warmup_steps": self.warmup_steps,
            "gate_was_active": self.gate_was_active,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SchedulerState":
        return cls(**payload)


def warmup_gate(step: int, state: SchedulerState, roles: dict[str, str]) -> list[str]:
    """Task ids allowed to train at ``step``, in the given order.

    While ``hrl_warmup`` is on and ``step <= warmup_steps`` only tasks with
    the ``hrl`` role are allowed; afterwards every task is.
    """
    if state.hrl_warmup and step <= state.warmup_steps:
        return [t for t, role in roles.items() if role == "hrl"]
    return list(roles)


def pick_initial_task(ordered_tasks, allowed) -> str:
    """First task in configured order that the gate allows."""
    allowed = set(allowed)
    for task in ordered_tasks:
        if task in allowed:
            return task
    raise InvalidInputError("warmup gate allows no task; need at least one HRL task")


def self_paced_step(
    state: SchedulerState,
    table: CompetenceTable,
    d_smoothed_now: float,
    d_smoothed_prev: float | None,
    step: int,
    allowed_tasks,
    rng: np.random.Generator,
    gate_active: bool = False,
) -> ScheduleEvent | None:
    """One switch decision after a completed update on the current task.

    ``d_smoothed_now`` is the smoothed variation produced by the update
    that just finished; ``d_smoothed_prev`` is the one before it.  The
    first decision after entering a task only clears ``changed_task`` (the
    two-update minimum).  Otherwise a strict decrease below
    ``alpha * prev`` triggers sampling a new task, unless the gate leaves
    no candidate, in which case the scheduler stays put.
    """
    state.steps_on_task += 1
    event = None
    if state.changed_task:
        state.changed_task = False
    else:
        if d_smoothed_prev is None:
            raise InternalStateError(
                "switch test evaluated without a previous smoothed value; "
                "the two-update minimum was violated"
            )
        if d_smoothed_now < state.alpha * d_smoothed_prev:
            candidates = [t for t in allowed_tasks if t != state.current_task]
            if candidates:
                nxt = sample_next_task(table, state.current_task, allowed_tasks, rng)
                trigger = (
                    "warmup-end"
                    if state.gate_was_active and not gate_active
                    else "variation-decrease"
                )
                event = ScheduleEvent(step, state.current_task, nxt, trigger)
                state.current_task = nxt
                state.changed_task = True
                state.steps_on_task = 0
    state.gate_was_active = gate_active
    return event


def alternation_step(
    state: SchedulerState,
    allowed_ordered,
    step: int,
    gate_active: bool = False,
) -> ScheduleEvent | None:
    """Advance to the next task in fixed cyclic order after every update.

    Returns ``None`` only when the (gated) cycle contains a single task.
    """
    allowed = list(allowed_ordered)
    if not allowed:
        raise InvalidInputError("alternation needs a non-empty task list")
    state.steps_on_task += 1
    cur = state.current_task
    if cur in allowed:
        nxt = allowed[(allowed.index(cur) + 1) % len(allowed)]
    else:
        nxt = allowed[0]
    event = None
    if nxt != cur:
        trigger = (
            "warmup-end"
            if state.gate_was_active and not gate_active
            else "alternation-cycle"
        )
        event = ScheduleEvent(step, cur, nxt, trigger)
        state.current_task = nxt
        state.steps_on_task = 0
    state.gate_was_active = gate_active
    return event


def shuffled_batch_plan(tasks, n_slots: int, rng: np.random.Generator) -> list[str]:
    """Uniform iid task assignment for ``n_slots`` example slots.

    This is the batch-level realization of upsampling every task to a
    common size and shuffling: in the long run each task fills the same
    share of slots regardless of corpus size.
    """
    ids = [getattr(t, "id", t) for t in tasks]
    if not ids:
        raise InvalidInputError("shuffled_batch_plan needs at least one task")
    if n_slots < 0:
        raise InvalidInputError("n_slots must be non-negative")
    picks = rng.integers(len(ids), size=n_slots)
    return [ids[int(i)] for i in picks]
