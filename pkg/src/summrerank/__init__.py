"""Second-stage re-ranking of candidate summaries balancing lexical and semantic quality."""

from .encoder import MeanPoolEncoder, OracleScorer, score_candidates, select_best, similarity
from .losses import LossConfig, RankedBatch, combined_loss, contrastive_loss, instance_weights, ranking_loss
from .metrics import rouge_avg, rouge_l, rouge_n
from .pool import CandidatePool, Document, generate_synthetic_corpus, load_pools, write_pools
from .training import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train, validate

__version__ = "0.1.0"

__all__ = [
    "CandidatePool",
    "Checkpoint",
    "Document",
    "LossConfig",
    "MeanPoolEncoder",
    "OracleScorer",
    "RankedBatch",
    "TrainConfig",
    "combined_loss",
    "contrastive_loss",
    "generate_synthetic_corpus",
    "instance_weights",
    "load_checkpoint",
    "load_pools",
    "ranking_loss",
    "rouge_avg",
    "rouge_l",
    "rouge_n",
    "save_checkpoint",
    "score_candidates",
    "select_best",
    "similarity",
    "train",
    "validate",
    "write_pools",
]
