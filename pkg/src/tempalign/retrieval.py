"""Recall@k retrieval evaluation over fused score matrices.

Both directions are evaluated from one square score matrix whose entry
[i, j] scores audio i against text j and whose diagonal is ground truth:
text-to-audio treats each column as a query over audio rows, audio-to-text
treats each row as a query over text columns.

Ties are broken deterministically by candidate index (smaller index ranks
first) and counted, so degenerate score collapse is visible in reports.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyBatch, InvalidK

DEFAULT_KS = (5, 20, 100)


@dataclass
class RetrievalReport:
    direction: str  # "T2A" or "A2T"
    n: int
    recalls: dict[int, float]
    ties_broken: int

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "n": self.n,
            "recalls": {str(k): v for k, v in sorted(self.recalls.items())},
            "ties_broken": self.ties_broken,
        }


def rank_targets(scores_row: np.ndarray, true_index: int) -> int:
    """1-based rank of the true target within one query's candidate scores.

    rank = 1 + (# strictly higher) + (# equal with smaller index).
    """
    row = np.asarray(scores_row, dtype=np.float64)
    if row.ndim != 1:
        raise DimensionMismatch(f"scores row must be 1-D, got shape {row.shape}")
    if not (0 <= true_index < row.shape[0]):
        raise IndexError(f"true_index {true_index} out of range for {row.shape[0]} candidates")
    if not np.isfinite(row).all():
        raise DataError("scores row contains non-finite values")
    true_score = row[true_index]
    higher = int(np.sum(row > true_score))
    tied_before = int(np.sum(row[:true_index] == true_score))
    return 1 + higher + tied_before


def _direction_report(score_rows: np.ndarray, direction: str, ks: tuple[int, ...]) -> RetrievalReport:
    n = score_rows.shape[0]
    ranks = np.empty(n, dtype=np.int64)
    ties = 0
    for q in range(n):
        ranks[q] = rank_targets(score_rows[q], q)
        ties += int(np.sum(score_rows[q] == score_rows[q, q])) - 1
    recalls = {k: float(np.mean(ranks <= k)) for k in ks}
    return RetrievalReport(direction=direction, n=n, recalls=recalls, ties_broken=ties)


def recall_at_k(
    scores: np.ndarray, ks: tuple[int, ...] = DEFAULT_KS
) -> tuple[RetrievalReport, RetrievalReport]:
    """(T2A, A2T) recall reports for a square score matrix with diagonal truth.

    recall@k is the fraction of queries whose true target ranks <= k.  A
    cutoff beyond the candidate count is allowed and simply saturates at 1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionMismatch(f"score matrix must be square, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise DataError("score matrix contains non-finite values")
    for k in ks:
        if int(k) != k or k < 1:
            raise InvalidK(f"recall cutoff must be a positive integer, got {k}")
    ks = tuple(int(k) for k in ks)
    t2a = _direction_report(scores.T, "T2A", ks)  # query = text column, candidates = audios
    a2t = _direction_report(scores, "A2T", ks)  # query = audio row, candidates = texts
    return t2a, a2t


def eval_report(
    text_store,
    audio_store,
    manifest,
    cfg,
    split: str = "eval",
    kernel_secs: float = 9.0,
    stride_secs: float = 6.0,
    ref_window: float = 30.0,
    ks: tuple[int, ...] = DEFAULT_KS,
    workers: int = 1,
) -> tuple[RetrievalReport, RetrievalReport]:
    """Score every pair of one manifest split and report both directions.

    The audio store holds fused per-timestep sequences; the fused score
    matrix is built over all resolved pairs, so each query ranks against
    the whole pool.  Recalls are order invariant in the manifest because
    the diagonal pairing follows resolution order.
    """
    from .contrastive import batch_scores
    from .framing import kernel_params, unfold
    from .store import resolve_pairs

    pairs = resolve_pairs(manifest, text_store, audio_store, split)
    if not pairs:
        raise EmptyBatch(f"manifest has no pairs in split {split!r}")
    frames = [
        unfold(a.data, kernel_params(a.steps, kernel_secs, stride_secs, ref_window))
        for _, a in pairs
    ]
    texts = np.stack([t.data[0] for t, _ in pairs], axis=0)
    scores = batch_scores(frames, texts, cfg, workers=workers)
    return recall_at_k(scores, ks)
