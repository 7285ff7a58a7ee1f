"""Teacher-gated distillation: hardened BCE outside an ambiguity band.

A teacher confidence at or above the band's upper edge hardens to target 1,
at or below the lower edge to target 0, and anything strictly inside the band
is skipped outright, contributing exactly zero gradient. Student scores are
clamped to [1e-7, 1 - 1e-7] before the log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..frontview import FrontViewMap
from .tensor import Tensor
from .viewpoint import BIN_WIDTH, N_BINS

DEFAULT_BAND = (0.3, 0.7)
SCORE_CLAMP = 1e-7

__all__ = [
    "DEFAULT_BAND",
    "distill_loss",
    "distill_batch_loss",
    "ScriptedTeacher",
]


def _harden(teacher_score: float, band: tuple):
    a_lo, a_hi = (float(b) for b in band)
    if not a_lo < a_hi:
        raise ValueError(f"band must satisfy a_lo < a_hi, got {band}")
    t = float(teacher_score)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"teacher score must be in [0, 1], got {t}")
    if t >= a_hi:
        return 1.0
    if t <= a_lo:
        return 0.0
    return None


def distill_loss(student_score, teacher_score: float, band: tuple = DEFAULT_BAND):
    """BCE of the student against the hardened teacher target, or None (skip)."""
    target = _harden(teacher_score, band)
    if target is None:
        return None
    s = student_score if isinstance(student_score, Tensor) else Tensor(student_score)
    if s.size != 1:
        raise ValueError("student score must be scalar")
    s = s.clip(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    if target >= 1.0:
        return -s.log().reshape(())
    return -(1.0 - s).log().reshape(())


def distill_batch_loss(
    student_scores: list, teacher_scores, band: tuple = DEFAULT_BAND
) -> tuple:
    """(mean loss Tensor, contributing count) over a batch of score pairs.

    In-band pairs are dropped before the mean; with no contributors the loss
    is a constant zero tensor (no gradient flows anywhere).
    """
    losses = []
    for s, t in zip(student_scores, np.asarray(teacher_scores, dtype=np.float64)):
        term = distill_loss(s, float(t), band)
        if term is not None:
            losses.append(term)
    if not losses:
        return Tensor(0.0), 0
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total * (1.0 / len(losses)), len(losses)


@dataclass(frozen=True)
class ScriptedTeacher:
    """Deterministic stand-in for a pre-trained teacher network.

    Classification confidence is a sigmoid of the patch occupancy fraction:
    dense object patches score near 1, empty patches near 0, and middling
    occupancy lands inside the default ambiguity band. The viewpoint output
    spreads probability around the principal axis of the occupied cells.
    """

    gain: float = 12.0
    midpoint: float = 0.35

    def classify(self, patch: FrontViewMap) -> float:
        occ = float(np.count_nonzero(patch.occupancy)) / patch.occupancy.size
        return 1.0 / (1.0 + math.exp(-self.gain * (occ - self.midpoint)))

    def viewpoint(self, patch: FrontViewMap) -> tuple:
        """(16 bin probabilities, 16 per-bin residuals)."""
        occ = patch.occupancy
        if not occ.any():
            return np.full(N_BINS, 1.0 / N_BINS), np.zeros(N_BINS)
        rows, cols = np.nonzero(occ)
        pts = np.column_stack([rows, cols]).astype(np.float64)
        pts -= pts.mean(axis=0)
        cov = pts.T @ pts / pts.shape[0]
        _, vecs = np.linalg.eigh(cov)
        axis = vecs[:, -1]
        angle = math.atan2(axis[1], axis[0]) % (2.0 * math.pi)
        centers = (np.arange(N_BINS) + 0.5) * BIN_WIDTH
        logits = 2.0 * np.cos(centers - angle)
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        return probs, np.zeros(N_BINS)
