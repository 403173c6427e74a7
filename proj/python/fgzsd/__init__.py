# Copyright (c) 2026, The fgzsd authors
# SPDX-License-Identifier: Apache-2.0
"""Fine-grained zero-shot detection: taxonomy-aware losses, splits and metrics."""

from ._core import (
    Error,
    audit_split,
    avss_loss,
    cosine,
    default_config,
    evaluate,
    genus_split,
    gradient_suite,
    harmonic_mean,
    image_text_similarity,
    iou,
    logsumexp,
    total_loss,
    train_toy,
    validate_manifest,
    word_region_attention,
)

__all__ = [
    "Error",
    "audit_split",
    "avss_loss",
    "cosine",
    "default_config",
    "evaluate",
    "genus_split",
    "gradient_suite",
    "harmonic_mean",
    "image_text_similarity",
    "iou",
    "logsumexp",
    "total_loss",
    "train_toy",
    "validate_manifest",
    "word_region_attention",
]
