"""In-batch contrastive scoring, loss, and hand-derived reverse-mode gradients.

The N x N score matrix holds the fused alignment score of every audio row
against every text column.  The loss is a cross-entropy over each audio's
score row with the matched text as the positive class; a symmetric variant
averages in the column-wise analogue.

Gradients are reverse-mode by hand for this fixed computation graph: loss
-> fused score -> pooled scores -> attention maps (through their softmax
Jacobians) -> similarity entries -> frame slots and text vectors, with
frame-slot gradients folded back onto source timesteps.  Everything is
validated against central finite differences (see :func:`grad_check`).

Scoring and backprop may fan out over audios with a thread pool; each
audio's row is an independent task written into its own slot and partial
gradients are reduced in a fixed order afterwards, so results are
bit-identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .alignment import FusionConfig, _unit_rows, softmax
from .errors import DataError, DegenerateInput, DimensionMismatch, EmptyBatch
from .framing import FrameTensor, fold_back, kernel_params, unfold

ScoreMatrix = np.ndarray  # (N, N), entry [i, j] = audio i scored against text j


@dataclass
class GradientBundle:
    """Gradients of the batch loss with respect to every input."""

    loss: float
    text_grads: np.ndarray  # (N, D)
    audio_grads: list[np.ndarray]  # per audio, (T_i, D) timestep gradients
    kernel_weight_grad: float
    temporal_weight_grad: float


def _text_matrix(texts: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    arr = np.asarray(texts, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"texts must form an (N, D) matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("texts contain non-finite values")
    return arr


def _validate_batch(audios: Sequence[FrameTensor], texts) -> np.ndarray:
    if len(audios) == 0 or (hasattr(texts, "__len__") and len(texts) == 0):
        raise EmptyBatch("batch must contain at least one pair")
    texts_arr = _text_matrix(texts)
    if len(audios) != texts_arr.shape[0]:
        raise DimensionMismatch(
            f"{len(audios)} audios vs {texts_arr.shape[0]} texts"
        )
    for a in audios:
        if a.dim != texts_arr.shape[1]:
            raise DimensionMismatch(
                f"audio dim {a.dim} does not match text dim {texts_arr.shape[1]}"
            )
    return texts_arr


def _prep_texts(texts_arr: np.ndarray, normalize: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Return texts ready for the similarity kernel (unit rows if normalising)."""
    if not normalize:
        return texts_arr, None
    unit, norms = _unit_rows(texts_arr)
    if np.any(norms == 0.0):
        raise DegenerateInput("zero text vector cannot be normalised")
    return unit, norms


def _row_forward(frames: FrameTensor, prepped_texts: np.ndarray, cfg: FusionConfig) -> dict:
    """Score one audio against every text; keep intermediates for backward.

    Returns a cache with sim3 (W, H, N), both attention stacks, the pooled
    score vectors, and the frame normalisation data.
    """
    arr = frames.frames
    if cfg.normalize:
        unit_frames, frame_norms = _unit_rows(arr)
    else:
        unit_frames, frame_norms = arr, None
    sim3 = np.einsum("whd,nd->whn", unit_frames, prepped_texts, optimize=False)
    w, h = arr.shape[0], arr.shape[1]
    k_attn = softmax(sim3, axis=1)
    t_attn = softmax(sim3, axis=0)
    kernel_scores = np.sum(sim3 * k_attn, axis=(0, 1)) / h
    temporal_scores = np.sum(sim3 * t_attn, axis=(0, 1)) / w
    row = (cfg.kernel_weight * kernel_scores + cfg.temporal_weight * temporal_scores) / cfg.temperature
    return {
        "row": row,
        "sim3": sim3,
        "k_attn": k_attn,
        "t_attn": t_attn,
        "kernel_scores": kernel_scores,
        "temporal_scores": temporal_scores,
        "unit_frames": unit_frames,
        "frame_norms": frame_norms,
    }


def _row_backward(
    frames: FrameTensor,
    prepped_texts: np.ndarray,
    text_norms: np.ndarray | None,
    cfg: FusionConfig,
    cache: dict,
    row_grad: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Backward pass for one audio row given d loss / d row (length N).

    Returns (d_seq (T, D), d_texts (N, D), d_kernel_weight, d_temporal_weight).
    """
    sim3, k_attn, t_attn = cache["sim3"], cache["k_attn"], cache["t_attn"]
    w, h = frames.num_frames, frames.kernel_size
    d_kernel_scores = row_grad * cfg.kernel_weight / cfg.temperature  # (N,)
    d_temporal_scores = row_grad * cfg.temporal_weight / cfg.temperature

    # d(sum sim * softmax(sim)) / d sim_b = attn_b * (1 + sim_b - weighted_mean),
    # the softmax Jacobian contracted against sim.
    row_means = np.sum(sim3 * k_attn, axis=1, keepdims=True)  # (W, 1, N)
    col_means = np.sum(sim3 * t_attn, axis=0, keepdims=True)  # (1, H, N)
    d_sim3 = (d_kernel_scores / h) * k_attn * (1.0 + sim3 - row_means)
    d_sim3 += (d_temporal_scores / w) * t_attn * (1.0 + sim3 - col_means)

    if cfg.normalize:
        unit_frames, frame_norms = cache["unit_frames"], cache["frame_norms"]
        # cos = u_hat . t_hat; d/d u = (t_hat - cos * u_hat) / |u|
        d_unit = np.einsum("whn,nd->whd", d_sim3, prepped_texts, optimize=False)
        cos_weight = np.sum(d_sim3 * sim3, axis=2)  # (W, H)
        safe = np.where(frame_norms > 0.0, frame_norms, 1.0)
        d_frames = (d_unit - cos_weight[..., None] * unit_frames) / safe[..., None]
        d_frames[frame_norms == 0.0] = 0.0  # zero slot: sim is identically 0
        d_texts = np.einsum("whn,whd->nd", d_sim3, unit_frames, optimize=False)
        text_cos_weight = np.sum(d_sim3 * sim3, axis=(0, 1))  # (N,)
        d_texts = (d_texts - text_cos_weight[:, None] * prepped_texts) / text_norms[:, None]
    else:
        d_frames = np.einsum("whn,nd->whd", d_sim3, prepped_texts, optimize=False)
        d_texts = np.einsum("whn,whd->nd", d_sim3, frames.frames, optimize=False)

    d_seq = fold_back(d_frames, frames.params)
    d_kw = float(np.dot(row_grad, cache["kernel_scores"])) / cfg.temperature
    d_tw = float(np.dot(row_grad, cache["temporal_scores"])) / cfg.temperature
    return d_seq, d_texts, d_kw, d_tw


def _map_rows(fn: Callable[[int], object], n: int, workers: int) -> list:
    """Run fn(i) for i in range(n), optionally on a thread pool, slot-ordered."""
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def batch_scores(
    audios: Sequence[FrameTensor],
    texts: Sequence[np.ndarray] | np.ndarray,
    cfg: FusionConfig = FusionConfig(),
    workers: int = 1,
) -> ScoreMatrix:
    """Fused score of every audio (rows) against every text (columns)."""
    texts_arr = _validate_batch(audios, texts)
    prepped, _ = _prep_texts(texts_arr, cfg.normalize)
    rows = _map_rows(lambda i: _row_forward(audios[i], prepped, cfg)["row"], len(audios), workers)
    return np.stack(rows, axis=0)


def _check_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionMismatch(f"score matrix must be square, got shape {scores.shape}")
    if scores.shape[0] == 0:
        raise EmptyBatch("score matrix is empty")
    if not np.isfinite(scores).all():
        raise DataError("score matrix contains non-finite values")
    return scores


def _directional_loss(scores: np.ndarray) -> float:
    """Cross-entropy over rows with the diagonal as the positive class."""
    m = np.max(scores, axis=1)
    lse = m + np.log(np.sum(np.exp(scores - m[:, None]), axis=1))
    return float(np.sum(lse - np.diagonal(scores)))


def nce_loss(scores: ScoreMatrix, symmetric: bool = False) -> float:
    """In-batch contrastive loss; log-sum-exp stabilised.

    The one-directional form sums -log softmax_j(row_i)[i] over rows.  The
    symmetric form averages the row-wise and column-wise losses.
    """
    scores = _check_scores(scores)
    loss = _directional_loss(scores)
    if symmetric:
        loss = 0.5 * (loss + _directional_loss(scores.T))
    return loss


def loss_grad_scores(scores: ScoreMatrix, symmetric: bool = False) -> np.ndarray:
    """Analytic d loss / d scores: softmax minus one-hot, per direction."""
    scores = _check_scores(scores)
    n = scores.shape[0]
    eye = np.eye(n)
    grad = softmax(scores, axis=1) - eye
    if symmetric:
        grad = 0.5 * grad + 0.5 * (softmax(scores, axis=0) - eye)
    return grad


def backprop(
    audios: Sequence[FrameTensor],
    texts: Sequence[np.ndarray] | np.ndarray,
    cfg: FusionConfig = FusionConfig(),
    symmetric: bool = False,
    workers: int = 1,
) -> GradientBundle:
    """Loss and exact gradients w.r.t. every text vector, every audio
    timestep vector, and both fusion weights.

    Attention maps are treated as functions of the similarity matrix (their
    softmax Jacobians are part of the chain), and frame-slot gradients are
    folded back by summing over every slot that read a timestep.
    """
    texts_arr = _validate_batch(audios, texts)
    prepped, text_norms = _prep_texts(texts_arr, cfg.normalize)
    n = len(audios)

    caches = _map_rows(lambda i: _row_forward(audios[i], prepped, cfg), n, workers)
    scores = np.stack([c["row"] for c in caches], axis=0)
    loss = nce_loss(scores, symmetric=symmetric)
    score_grads = loss_grad_scores(scores, symmetric=symmetric)

    partials = _map_rows(
        lambda i: _row_backward(audios[i], prepped, text_norms, cfg, caches[i], score_grads[i]),
        n,
        workers,
    )
    # Fixed-order reduction keeps the result independent of the worker count.
    text_grads = np.zeros_like(texts_arr)
    audio_grads = []
    kw_grad = 0.0
    tw_grad = 0.0
    for d_seq, d_texts, d_kw, d_tw in partials:
        audio_grads.append(d_seq)
        text_grads += d_texts
        kw_grad += d_kw
        tw_grad += d_tw
    return GradientBundle(
        loss=loss,
        text_grads=text_grads,
        audio_grads=audio_grads,
        kernel_weight_grad=kw_grad,
        temporal_weight_grad=tw_grad,
    )


# ---------------------------------------------------------------------------
# Finite-difference validation


def relative_error(a: float, b: float) -> float:
    """Scale-robust comparison: |a - b| / max(1, |a|, |b|)."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


@dataclass
class GradCheckReport:
    """Max relative error per parameter group plus the pass verdict."""

    groups: dict[str, float]
    epsilon: float
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = all(v <= self.tolerance for v in self.groups.values())


def central_difference(f: Callable[[], float], bump: Callable[[float], None], epsilon: float) -> float:
    """Central finite difference of f under a parameter bump callback."""
    bump(epsilon)
    hi = f()
    bump(-2.0 * epsilon)
    lo = f()
    bump(epsilon)  # restore
    return (hi - lo) / (2.0 * epsilon)


def random_batch(
    rng: np.random.Generator,
    batch: int,
    dim: int,
    seq_len_range: tuple[int, int] = (12, 40),
    kernel_secs: float = 9.0,
    stride_secs: float = 6.0,
) -> tuple[list[np.ndarray], list, np.ndarray]:
    """Random (sequences, framing params, texts) triple for checks and tests."""
    seqs, params = [], []
    for _ in range(batch):
        seq_len = int(rng.integers(seq_len_range[0], seq_len_range[1] + 1))
        seqs.append(rng.normal(size=(seq_len, dim)))
        params.append(kernel_params(seq_len, kernel_secs, stride_secs))
    texts = rng.normal(size=(batch, dim))
    return seqs, params, texts


def grad_check(
    seed: int = 0,
    batch: int = 4,
    dim: int = 8,
    seq_len_range: tuple[int, int] = (12, 40),
    epsilon: float = 1e-5,
    tolerance: float = 1e-6,
    cfg: FusionConfig = FusionConfig(),
    symmetric: bool = False,
    _corrupt: str | None = None,
) -> GradCheckReport:
    """Compare the hand-derived gradients against central finite differences.

    Groups: "texts", "audio" (timestep sequences), "gammas" (fusion
    weights).  Deterministic given the seed.  ``_corrupt`` is a test hook
    that perturbs one analytic gradient group to prove the check can fail.
    """
    rng = np.random.default_rng(seed)
    seqs, params, texts = random_batch(rng, batch, dim, seq_len_range)
    audios = [unfold(s, p) for s, p in zip(seqs, params)]

    bundle = backprop(audios, texts, cfg, symmetric=symmetric)
    if _corrupt is not None:
        if _corrupt == "texts":
            bundle.text_grads[0, 0] += 1e-3
        elif _corrupt == "audio":
            bundle.audio_grads[0][0, 0] += 1e-3
        elif _corrupt == "gammas":
            bundle.kernel_weight_grad += 1e-3
        else:
            raise ValueError(f"unknown corruption target {_corrupt!r}")

    def loss_now(fusion: FusionConfig = cfg) -> float:
        frames = [unfold(s, p) for s, p in zip(seqs, params)]
        return nce_loss(batch_scores(frames, texts, fusion), symmetric=symmetric)

    errs = {"texts": 0.0, "audio": 0.0, "gammas": 0.0}
    for j in range(batch):
        for d in range(dim):
            def bump(delta, j=j, d=d):
                texts[j, d] += delta
            fd = central_difference(loss_now, bump, epsilon)
            errs["texts"] = max(errs["texts"], relative_error(bundle.text_grads[j, d], fd))
    for i in range(batch):
        seq = seqs[i]
        for t in range(seq.shape[0]):
            for d in range(dim):
                def bump(delta, seq=seq, t=t, d=d):
                    seq[t, d] += delta
                fd = central_difference(loss_now, bump, epsilon)
                errs["audio"] = max(errs["audio"], relative_error(bundle.audio_grads[i][t, d], fd))
    for name, analytic in (
        ("kernel_weight", bundle.kernel_weight_grad),
        ("temporal_weight", bundle.temporal_weight_grad),
    ):
        lo = loss_now(_shift_weight(cfg, name, -epsilon))
        hi = loss_now(_shift_weight(cfg, name, epsilon))
        fd = (hi - lo) / (2.0 * epsilon)
        errs["gammas"] = max(errs["gammas"], relative_error(analytic, fd))
    return GradCheckReport(groups=errs, epsilon=epsilon, tolerance=tolerance)


def _shift_weight(cfg: FusionConfig, name: str, delta: float) -> FusionConfig:
    kw = cfg.kernel_weight + (delta if name == "kernel_weight" else 0.0)
    tw = cfg.temporal_weight + (delta if name == "temporal_weight" else 0.0)
    return FusionConfig(kw, tw, cfg.normalize, cfg.temperature)
