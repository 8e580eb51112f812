"""taskpace: self-paced multitask training driven by weight variation.

The scheduler measures how much a model's weights still move when it
trains on a task (symmetric KL divergence between softmax-normalized
parameter tensors across consecutive same-task updates, exponentially
smoothed per task) and switches to a new task, sampled by competence,
once that variation stops growing.  The package bundles the metric and
scheduling machinery with a small numpy transformer trainer, synthetic
related-task families, and an experiment harness.
"""

from .competence import CompetenceEntry, CompetenceTable, sample_next_task
from .config import RunConfig
from .errors import (
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    InternalStateError,
    InvalidInputError,
    LogParseError,
    TaskpaceError,
)
from .metrics import (
    MetricKind,
    WeightSnapshot,
    rolling_average,
    softmax_normalize,
    symmetric_kl,
    weight_variation,
)
from .model import ModelDims, TransformerModel, token_stats_from_cache
from .runner import (
    RunResult,
    build_family,
    evaluate_model,
    replay_decisions,
    run_compare_metrics,
    run_report,
    run_sweep,
    run_training,
)
from .scheduler import (
    ScheduleEvent,
    SchedulerState,
    alternation_step,
    pick_initial_task,
    self_paced_step,
    shuffled_batch_plan,
    warmup_gate,
)
from .tasks import (
    ExamplePair,
    TaskFamily,
    TaskSpec,
    export_family,
    generate_task_family,
    load_family,
    make_batch,
    make_shuffled_batch,
    pad_batch,
)
from .training import (
    AdamState,
    TrainerConfig,
    apply_update,
    clip_gradients,
    from_profile,
    load_checkpoint,
    noam_lr,
    save_checkpoint,
)

__version__ = "0.1.0"
