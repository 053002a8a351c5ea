"""gramtraj: a desk-scale lab for measuring grammar-learning trajectories of
small language models on minimal-pair challenge suites."""

from .analysis import (
    ClusterAssignment,
    CorrelationCurve,
    CorrelationReport,
    ReferenceVector,
    TrajectoryMatrix,
    align_by_perplexity,
    cluster_trajectories,
    correlate,
    correlation_curve,
    fleiss_kappa,
    load_reference_csv,
    mean_pairwise_correlation,
    metric_vector,
)
from .corpus import (
    TokenizedCorpus,
    Vocabulary,
    build_corpus,
    build_vocab,
    decode,
    encode,
    read_documents,
    stream_batches,
    tokenize,
)
from .harness import (
    Challenge,
    ChallengeSuite,
    DecisionMatrix,
    MinimalPair,
    NGramScorer,
    NeuralScorer,
    PerformanceVector,
    SentenceScore,
    evaluate_checkpoint,
    load_suite,
    score_pair,
)
from .manifest import export_tables, run_manifest
from .neural import (
    Model,
    ModelConfig,
    TrainConfig,
    build_model,
    forward_loss,
    gradient_check,
    load_checkpoint,
    run_training,
    save_checkpoint,
    train_step,
)
from .ngram import NGramModel, train_ngram

__version__ = "0.1.0"
