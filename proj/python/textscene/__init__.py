"""Text-to-scene retrieval: KG embeddings, shared cross-modal alignment, R@K evaluation."""

from ._core import (
    AlignModel,
    DataError,
    Error,
    NumericalError,
    RetrievalIndex,
    UsageError,
    build_caption,
    contrastive_loss,
    cosine_sim,
    pluralize,
    quantity_descriptor,
    recall_at_k,
    sce_reproject,
    score_distmult,
    score_transe,
    softmax,
    tokenize,
    total_loss,
    train_kge,
    train_synthetic,
)

__all__ = [
    "AlignModel",
    "DataError",
    "Error",
    "NumericalError",
    "RetrievalIndex",
    "UsageError",
    "build_caption",
    "contrastive_loss",
    "cosine_sim",
    "pluralize",
    "quantity_descriptor",
    "recall_at_k",
    "sce_reproject",
    "score_distmult",
    "score_transe",
    "softmax",
    "tokenize",
    "total_loss",
    "train_kge",
    "train_synthetic",
]
