"""Merge-and-Label nested named-entity recognition on a small numpy autodiff engine."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import (
    Article,
    Batch,
    Corpus,
    CorpusError,
    FeatureVocab,
    LabelSet,
    Sentence,
    Span,
    build_merge_targets,
    load_embeddings,
    make_batches,
    read_corpus,
    write_corpus,
)
from .evaluate import EntitySpan, cutoff_search, decode, decode_all, gold_spans, predict, score, strict_f1
from .model import MergeLabelModel, ModelConfig, ModelOutput, StructureOutput
from .tensor import ShapeError, Tensor, backward, no_grad, precision
from .train import LossBreakdown, TrainingDiverged, compute_loss, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "Article", "Batch", "Checkpoint", "CheckpointError", "ConfigError", "Corpus", "CorpusError",
    "EntitySpan", "FeatureVocab", "LabelSet", "LossBreakdown", "MergeLabelModel", "ModelConfig",
    "ModelOutput", "RunConfig", "Sentence", "ShapeError", "Span", "StructureOutput", "Tensor",
    "TrainingDiverged", "backward", "build_merge_targets", "compute_loss", "cutoff_search", "decode",
    "decode_all", "gold_spans", "load_checkpoint", "load_embeddings", "lr_schedule", "make_batches",
    "no_grad", "precision", "predict", "read_corpus", "save_checkpoint", "score", "strict_f1", "train",
    "write_corpus",
]
