"""contuner: a desk-scale continual-learning engine.

Low-rank adapter modules over a frozen hashed-feature encoder, trained
across disjoint task sequences either as one continually-grown head
(static engine) or as per-task experts behind a trainable selector with a
persistent logit cache (dynamic engine). Old-task data is replayed
hierarchically from full history under a fixed per-step batch budget, so
training cost does not grow with the task number.
"""

from .cache import CacheEntry, LogitCache
from .data import (
    ENTITY_TYPING,
    RELATION_EXTRACTION,
    Example,
    PreprocessedInput,
    SchemaCluster,
    TaskSequence,
    build_task_sequence,
    load_corpus,
    load_task_split,
    make_preprocessor,
    preprocess,
    split_examples,
    split_tasks,
)
from .dynamic import (
    DynamicState,
    SelectionConfig,
    predict,
    run_sequence,
    select_modules,
    train_task,
)
from .encoder import Encoder, EncoderConfig, Representation
from .metrics import StepReport, average_accuracy, whole_accuracy
from .pet import (
    AdamState,
    LogitVector,
    PetModule,
    PredictionRecord,
    dimension_expand,
    freeze,
    init_module,
    load_module,
    loss_and_grads,
    optimizer_step,
    pet_forward,
    save_module,
    tunable_parameter_count,
)
from .replay import (
    Batch,
    ReplayPlan,
    batch_budget,
    fixed_memory_sample,
    sample_batch,
    split_budget,
)
from .static import (
    StaticState,
    run_static_sequence,
    static_predict,
    static_train_task,
)
from .training import TrainSettings

__version__ = "0.1.0"
