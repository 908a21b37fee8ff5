"""slmkit: train specialized small language models from a generic corpus
plus a small in-domain corpus, at desk scale."""

from .clustering import (
    Clustering,
    ClusterHistogram,
    assign,
    embed,
    embed_tokens,
    entropy,
    fit_corpus_clustering,
    histogram,
    kmeans,
    top_cluster_fraction,
)
from .corpus import (
    ByteTokenizer,
    Corpus,
    Document,
    Window,
    WordTokenizer,
    corpus_windows,
    ingest,
    split_heldout,
    tokenize,
    window,
)
from .errors import (
    ConfigError,
    EmptyCorpusError,
    EmptyInputError,
    SlmkitError,
    StageDependencyError,
    TrainingDivergedError,
    UnsupportedClusterError,
)
from .evaluator import (
    CostModel,
    EvalReport,
    cost_units,
    crossover_tasks,
    evaluate,
    macro_average,
    perplexity,
    total_cost,
)
from .model import (
    MixtureLM,
    ModelConfig,
    PNConfig,
    ProjectedLM,
    TransformerLM,
    build_mix,
    build_pn,
    build_slm,
    count_params,
    load_checkpoint,
    nll,
    project_expert,
    save_checkpoint,
)
from .sampler import (
    ImportanceWeights,
    ResamplePlan,
    importance_weights,
    resample,
    resample_plan,
    weighted_loss,
)
from .specializer import (
    ExpertSelection,
    select_best_finetuned,
    select_best_pretrained,
    select_most_frequent,
    specialize,
)
from .trainer import (
    DistillConfig,
    FinetuneConfig,
    TrainConfig,
    TrainLog,
    distill,
    finetune,
    finetune_lora,
    pretrain,
    pretrain_is,
)

__version__ = "0.1.0"
