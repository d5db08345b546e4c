"""Pairwise alignment scoring between one framed audio sequence and one text vector.

The score of a (frames, text) pair is built in four steps:

1. a (num_frames x kernel_size) similarity matrix of per-slot cosines
   (or raw dot products when ``normalize`` is off),
2. a kernel attention map: softmax over kernel positions within each frame,
   and a temporal attention map: softmax over frames at each kernel position,
3. two attention-weighted pools of the similarity matrix, scaled by
   1/kernel_size and 1/num_frames respectively,
4. a weighted sum of the two pooled scores, divided by the temperature.

The asymmetric 1/kernel_size and 1/num_frames normalisations are kept as-is;
they are not convex-combination weights, so pooled scores can leave [-1, 1]
even for cosine similarities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateInput, DimensionMismatch
from .framing import FrameTensor


@dataclass(frozen=True)
class FusionConfig:
    """Weights and options for combining the two pooled scores."""

    kernel_weight: float = 0.5
    temporal_weight: float = 0.5
    normalize: bool = True
    temperature: float = 1.0

    def __post_init__(self):
        if not (self.temperature > 0):
            raise DataError(f"temperature must be positive, got {self.temperature}")
        if not np.isfinite([self.kernel_weight, self.temporal_weight]).all():
            raise DataError("fusion weights must be finite")


@dataclass
class AlignmentResult:
    """All intermediates of one pair's scoring pipeline."""

    sim: np.ndarray  # (W, H) similarities
    kernel_attn: np.ndarray  # rows sum to 1
    temporal_attn: np.ndarray  # columns sum to 1
    kernel_score: float
    temporal_score: float
    fused: float


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalise along the last axis; zero vectors stay zero."""
    norms = np.linalg.norm(x, axis=-1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe[..., None], norms


def similarity_matrix(
    frames: FrameTensor | np.ndarray, text: np.ndarray, normalize: bool = True
) -> np.ndarray:
    """Per-slot similarity between every frame timestep and the text vector.

    With ``normalize`` the entries are cosines; zero-norm frame slots map to
    similarity 0 (silent or padded regions), while a zero text vector is an
    error since every entry would be degenerate.
    """
    arr = frames.frames if isinstance(frames, FrameTensor) else np.asarray(frames, dtype=np.float64)
    text = np.asarray(text, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatch(f"frames must be 3-D, got shape {arr.shape}")
    if text.ndim != 1 or text.shape[0] != arr.shape[2]:
        raise DimensionMismatch(
            f"text has shape {text.shape}, frames have dim {arr.shape[2]}"
        )
    if not (np.isfinite(arr).all() and np.isfinite(text).all()):
        raise DataError("non-finite input to similarity")
    # einsum (optimize=False) keeps per-entry summation order fixed, so results
    # are reproducible bit-for-bit regardless of BLAS backend or threading.
    if normalize:
        text_norm = np.linalg.norm(text)
        if text_norm == 0.0:
            raise DegenerateInput("zero text vector cannot be normalised")
        unit_frames, _ = _unit_rows(arr)
        return np.einsum("whd,d->wh", unit_frames, text / text_norm, optimize=False)
    return np.einsum("whd,d->wh", arr, text, optimize=False)


def _check_sim(sim: np.ndarray) -> np.ndarray:
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2:
        raise DimensionMismatch(f"similarity matrix must be 2-D, got shape {sim.shape}")
    if not np.isfinite(sim).all():
        raise DataError("similarity matrix contains non-finite values")
    return sim


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    """Numerically stable softmax (max-subtraction) along one axis."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def kernel_attention(sim: np.ndarray) -> np.ndarray:
    """Softmax over kernel positions: each row of the output sums to 1."""
    return softmax(_check_sim(sim), axis=1)


def temporal_attention(sim: np.ndarray) -> np.ndarray:
    """Softmax over frames: each column of the output sums to 1."""
    return softmax(_check_sim(sim), axis=0)


def pooled_scores(
    sim: np.ndarray,
    kernel_attn: np.ndarray,
    temporal_attn: np.ndarray,
    kernel_size: int,
    num_frames: int,
) -> tuple[float, float]:
    """Attention-weighted pools of the similarity matrix.

    kernel_score sums sim * kernel_attn over all slots and divides by
    kernel_size; temporal_score does the same with temporal_attn and
    num_frames.
    """
    sim = _check_sim(sim)
    if sim.shape != (num_frames, kernel_size):
        raise DimensionMismatch(
            f"similarity shape {sim.shape} does not match ({num_frames}, {kernel_size})"
        )
    if kernel_attn.shape != sim.shape or temporal_attn.shape != sim.shape:
        raise DimensionMismatch("attention maps must match the similarity shape")
    kernel_score = float(np.sum(sim * kernel_attn) / kernel_size)
    temporal_score = float(np.sum(sim * temporal_attn) / num_frames)
    return kernel_score, temporal_score


def fused_score(kernel_score: float, temporal_score: float, cfg: FusionConfig) -> float:
    """Weighted combination of the two pooled scores, divided by temperature."""
    return (cfg.kernel_weight * kernel_score + cfg.temporal_weight * temporal_score) / cfg.temperature


def align(frames: FrameTensor, text: np.ndarray, cfg: FusionConfig = FusionConfig()) -> AlignmentResult:
    """Run the full per-pair scoring pipeline and keep every intermediate."""
    sim = similarity_matrix(frames, text, normalize=cfg.normalize)
    k_attn = kernel_attention(sim)
    t_attn = temporal_attention(sim)
    k_score, t_score = pooled_scores(sim, k_attn, t_attn, sim.shape[1], sim.shape[0])
    return AlignmentResult(
        sim=sim,
        kernel_attn=k_attn,
        temporal_attn=t_attn,
        kernel_score=k_score,
        temporal_score=t_score,
        fused=fused_score(k_score, t_score, cfg),
    )
