"""VQA accuracy and soft answer targets."""

from __future__ import annotations

import logging

import numpy as np
from scipy import stats

from .data import NUM_ANSWERS, normalize_answer
from .errors import ValidationError

log = logging.getLogger(__name__)


def vqa_accuracy(predicted: str, answers: list[str]) -> float:
    """Mean over the ten leave-one-out 9-answer subsets of ``min(matches / 3, 1)``."""
    if len(answers) != NUM_ANSWERS:
        raise ValidationError(f"need exactly {NUM_ANSWERS} answers, got {len(answers)}")
    pred = normalize_answer(predicted)
    hits = [normalize_answer(a) == pred for a in answers]
    total = sum(hits)
    # dropping a matching annotator leaves total-1 matches, otherwise total;
    # summing integer numerators first makes the result the correctly rounded ratio
    return sum(min(total - h, 3) for h in hits) / (3 * NUM_ANSWERS)


def soft_targets(answers: list[str], vocab: dict[str, int]) -> np.ndarray:
    """Slot ``a`` holds ``vqa_accuracy(a, answers)``; answers outside ``vocab`` are dropped."""
    out = np.zeros(len(vocab))
    seen = {normalize_answer(a) for a in answers}
    known = [a for a in seen if a in vocab]
    if not known:
        log.warning("no annotator answer is in the answer vocabulary: %s", sorted(seen))
    for a in known:
        out[vocab[a]] = vqa_accuracy(a, answers)
    return out


def paired_ttest(a, b) -> float:
    """Two-sided p-value of a paired t-test over per-sample accuracies."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValidationError("paired t-test needs two equal-length samples of size >= 2")
    diff = a - b
    if np.all(diff == diff[0]):
        return 1.0 if diff[0] == 0 else 0.0
    return float(stats.ttest_rel(a, b).pvalue)
