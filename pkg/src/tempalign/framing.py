"""Length-dependent framing of audio embedding sequences.

A sequence of T timesteps is cut into overlapping frames.  The kernel size
and stride are derived from per-frame / per-stride second budgets scaled by
the sequence length against a fixed reference window (default 30):

    kernel_size = floor(T * kernel_secs / ref_window)
    stride      = floor(T * stride_secs / ref_window)
    num_frames  = floor((T - kernel_size) / stride) + 1

Frames are materialised (overlapping timesteps are copied, not aliased) so
that gradient accumulation can simply sum the contributions of every frame
slot that read a timestep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, KernelExceedsLength, ParamMismatch, SequenceTooShort

REF_WINDOW = 30.0


@dataclass(frozen=True)
class KernelParams:
    """Framing geometry computed for one specific sequence length."""

    seq_len: int  # the T these params were computed from
    kernel_secs: float
    stride_secs: float
    kernel_size: int
    stride: int
    num_frames: int
    ref_window: float = REF_WINDOW


def kernel_params(
    seq_len: int,
    kernel_secs: float,
    stride_secs: float,
    ref_window: float = REF_WINDOW,
) -> KernelParams:
    """Derive kernel size, stride and frame count for a sequence of ``seq_len`` steps.

    Degenerate geometries are hard errors rather than clamped: a kernel or
    stride that floors to 0 raises SequenceTooShort, and a kernel longer
    than the sequence raises KernelExceedsLength.
    """
    if seq_len < 1:
        raise SequenceTooShort(f"sequence length must be >= 1, got {seq_len}")
    if not (0 < stride_secs <= kernel_secs):
        raise DataError(
            f"need 0 < stride_secs <= kernel_secs, got {stride_secs} / {kernel_secs}"
        )
    if ref_window <= 0:
        raise DataError(f"ref_window must be positive, got {ref_window}")
    kernel_size = math.floor(seq_len * kernel_secs / ref_window)
    stride = math.floor(seq_len * stride_secs / ref_window)
    if kernel_size < 1 or stride < 1:
        raise SequenceTooShort(
            f"seq_len={seq_len} with kernel_secs={kernel_secs}, stride_secs={stride_secs} "
            f"floors to kernel={kernel_size}, stride={stride}"
        )
    if kernel_size > seq_len:
        raise KernelExceedsLength(
            f"kernel size {kernel_size} exceeds sequence length {seq_len}"
        )
    num_frames = (seq_len - kernel_size) // stride + 1
    return KernelParams(
        seq_len=seq_len,
        kernel_secs=kernel_secs,
        stride_secs=stride_secs,
        kernel_size=kernel_size,
        stride=stride,
        num_frames=num_frames,
        ref_window=ref_window,
    )


@dataclass(frozen=True)
class FrameTensor:
    """Materialised frames of one sequence: shape (num_frames, kernel_size, dim)."""

    frames: np.ndarray
    params: KernelParams

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.frames.shape[1]

    @property
    def dim(self) -> int:
        return self.frames.shape[2]


def unfold(seq: np.ndarray, params: KernelParams) -> FrameTensor:
    """Cut ``seq`` (T, D) into frames: ``frames[v, h] = seq[v * stride + h]``.

    Trailing timesteps beyond the last full frame are dropped.  ``params``
    must have been computed for this exact T.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise ParamMismatch(f"sequence must be 2-D, got shape {seq.shape}")
    if seq.shape[0] != params.seq_len:
        raise ParamMismatch(
            f"params were computed for seq_len={params.seq_len}, sequence has {seq.shape[0]}"
        )
    if not np.isfinite(seq).all():
        raise DataError("sequence contains non-finite values")
    w, h = params.num_frames, params.kernel_size
    starts = np.arange(w) * params.stride
    idx = starts[:, None] + np.arange(h)[None, :]  # (W, H) timestep indices
    return FrameTensor(frames=seq[idx].copy(), params=params)


def fold_back(frame_grads: np.ndarray, params: KernelParams) -> np.ndarray:
    """Adjoint of :func:`unfold`: scatter-add frame-slot gradients to timesteps.

    Each timestep's gradient is the sum over every (frame, kernel-position)
    slot that read it, accumulated in increasing (v, h) order.  Timesteps
    dropped by the framing receive zero.
    """
    frame_grads = np.asarray(frame_grads, dtype=np.float64)
    w, h = params.num_frames, params.kernel_size
    if frame_grads.shape[:2] != (w, h):
        raise ParamMismatch(
            f"frame grads have shape {frame_grads.shape[:2]}, params say ({w}, {h})"
        )
    dim = frame_grads.shape[2]
    out = np.zeros((params.seq_len, dim))
    starts = np.arange(w) * params.stride
    idx = (starts[:, None] + np.arange(h)[None, :]).ravel()
    np.add.at(out, idx, frame_grads.reshape(w * h, dim))
    return out
