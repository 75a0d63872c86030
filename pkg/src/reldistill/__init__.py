"""Relevance distillation toolkit.

Teacher side: synthetic corpora, multi-perspective generation, consistency
filtering, conflict mining, and preference-pair construction. Student side:
a small cross-encoder with a latent reasoning extractor trained against
frozen rationale embeddings, plus evaluation, probing, efficiency audits,
and deployment-style tier calibration.
"""

from .config import EncoderConfig, ExtractorConfig, OptimizerConfig, RunConfig
from .schemas import (
    ALIEXPRESS6,
    ESCI4,
    LabeledPair,
    Perspective,
    RelevanceSchema,
    get_schema,
    load_dataset,
    load_esci_format,
    write_dataset,
)
from .teacher import (
    GenerationBackend,
    GenerationRecord,
    PerspectiveErrorMatrix,
    gen_synthetic_corpus,
    simulate_corpus,
    simulate_generation,
)
from .pipeline import (
    PreferencePair,
    SequenceScore,
    SftExample,
    aggregate_sft,
    build_preference_pairs,
    consistency_filter,
    dpo_loss,
    mine_conflicts,
    sft_nll,
)
from .training import (
    DistillExample,
    RelevanceStudent,
    Variant,
    load_checkpoint,
    save_checkpoint,
    train_student,
)
from .evaluation import metrics, oracle_report, perspective_heatmap, probe_study
from .tiering import TierCalibration, calibrate_thresholds, relevance_score, score_to_tier

__version__ = "0.1.0"

__all__ = [
    "ALIEXPRESS6",
    "ESCI4",
    "DistillExample",
    "EncoderConfig",
    "ExtractorConfig",
    "GenerationBackend",
    "GenerationRecord",
    "LabeledPair",
    "OptimizerConfig",
    "Perspective",
    "PerspectiveErrorMatrix",
    "PreferencePair",
    "RelevanceSchema",
    "RelevanceStudent",
    "RunConfig",
    "SequenceScore",
    "SftExample",
    "TierCalibration",
    "Variant",
    "aggregate_sft",
    "build_preference_pairs",
    "calibrate_thresholds",
    "consistency_filter",
    "dpo_loss",
    "gen_synthetic_corpus",
    "get_schema",
    "load_checkpoint",
    "load_dataset",
    "load_esci_format",
    "metrics",
    "mine_conflicts",
    "oracle_report",
    "perspective_heatmap",
    "probe_study",
    "relevance_score",
    "save_checkpoint",
    "score_to_tier",
    "sft_nll",
    "simulate_corpus",
    "simulate_generation",
    "train_student",
    "write_dataset",
]
