"""Desk-scale trainable model: audio adapter, text projection, fusion weights.

The audio side concatenates the music and speech features per timestep and
maps them through one linear adapter layer into the fused space; the text
side is a single linear projection.  Both are deliberately shallow: real
encoder outputs arrive through embedding stores, never through embedded
model inference.

This module also owns the chain-rule extension of the contrastive gradients
through the adapter and projection, the full-pipeline finite-difference
check, and the binary checkpoint format.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .alignment import FusionConfig
from .contrastive import (
    GradCheckReport,
    backprop,
    batch_scores,
    nce_loss,
    relative_error,
)
from .errors import DataError, DimensionMismatch, FormatError, IoError
from .framing import FrameTensor, kernel_params, unfold
from .optim import AdamW
from .synth import SynthPair

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sBBHIQ")  # magic, version, dtype, reserved, meta_len, entry_count
_U32 = struct.Struct("<I")


@dataclass
class ToyModelParams:
    """Trainable parameters; fusion weights are [kernel, temporal]."""

    text_w: np.ndarray  # (text_dim, fused_dim)
    text_b: np.ndarray  # (fused_dim,)
    adapter_w: np.ndarray | None  # (music_dim + speech_dim, fused_dim); None = plain concat
    adapter_b: np.ndarray | None
    fusion_weights: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    train_fusion_weights: bool = False

    @property
    def kernel_weight(self) -> float:
        return float(self.fusion_weights[0])

    @property
    def temporal_weight(self) -> float:
        return float(self.fusion_weights[1])

    @property
    def use_adapter(self) -> bool:
        return self.adapter_w is not None

    def fusion_config(self, normalize: bool = True, temperature: float = 1.0) -> FusionConfig:
        return FusionConfig(self.kernel_weight, self.temporal_weight, normalize, temperature)

    def trainable(self) -> dict[str, np.ndarray]:
        out = {"text_w": self.text_w, "text_b": self.text_b}
        if self.adapter_w is not None:
            out["adapter_w"] = self.adapter_w
            out["adapter_b"] = self.adapter_b
        if self.train_fusion_weights:
            out["fusion_weights"] = self.fusion_weights
        return out

    def copy(self) -> "ToyModelParams":
        return ToyModelParams(
            text_w=self.text_w.copy(),
            text_b=self.text_b.copy(),
            adapter_w=None if self.adapter_w is None else self.adapter_w.copy(),
            adapter_b=None if self.adapter_b is None else self.adapter_b.copy(),
            fusion_weights=self.fusion_weights.copy(),
            train_fusion_weights=self.train_fusion_weights,
        )

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        music_dim: int,
        speech_dim: int,
        text_dim: int,
        fused_dim: int,
        init_scale: float = 0.02,
        kernel_weight: float = 0.5,
        temporal_weight: float = 0.5,
        train_fusion_weights: bool = False,
        use_adapter: bool = True,
    ) -> "ToyModelParams":
        """Small-scale Gaussian init.  The cosine scoring is scale invariant
        in the maps, so a small init lets the optimizer's total movement
        budget dominate the learned directions."""
        if not use_adapter and fused_dim != music_dim + speech_dim:
            raise DimensionMismatch(
                f"plain concatenation needs fused_dim == music_dim + speech_dim, "
                f"got {fused_dim} != {music_dim + speech_dim}"
            )
        adapter_w = adapter_b = None
        if use_adapter:
            adapter_w = rng.normal(size=(music_dim + speech_dim, fused_dim)) * init_scale
            adapter_b = np.zeros(fused_dim)
        return cls(
            text_w=rng.normal(size=(text_dim, fused_dim)) * init_scale,
            text_b=np.zeros(fused_dim),
            adapter_w=adapter_w,
            adapter_b=adapter_b,
            fusion_weights=np.array([kernel_weight, temporal_weight], dtype=np.float64),
            train_fusion_weights=train_fusion_weights,
        )


def adapter_forward(music: np.ndarray, speech: np.ndarray, params: ToyModelParams) -> np.ndarray:
    """Fuse per-timestep music and speech features: concat then linear map.

    Without an adapter the concatenation itself is the fused representation.
    """
    music = np.asarray(music, dtype=np.float64)
    speech = np.asarray(speech, dtype=np.float64)
    if music.ndim != 2 or speech.ndim != 2 or music.shape[0] != speech.shape[0]:
        raise DimensionMismatch(
            f"music {music.shape} and speech {speech.shape} must share timestep counts"
        )
    stacked = np.concatenate([music, speech], axis=1)
    if params.adapter_w is None:
        return stacked
    if stacked.shape[1] != params.adapter_w.shape[0]:
        raise DimensionMismatch(
            f"adapter expects input dim {params.adapter_w.shape[0]}, got {stacked.shape[1]}"
        )
    return stacked @ params.adapter_w + params.adapter_b


def project_text(text: np.ndarray, params: ToyModelParams) -> np.ndarray:
    """Linear projection of raw text vectors, (D_T,) or (N, D_T)."""
    text = np.asarray(text, dtype=np.float64)
    if text.shape[-1] != params.text_w.shape[0]:
        raise DimensionMismatch(
            f"projection expects input dim {params.text_w.shape[0]}, got {text.shape[-1]}"
        )
    return text @ params.text_w + params.text_b


def frame_batch(
    pairs: Sequence[SynthPair],
    params: ToyModelParams,
    kernel_secs: float,
    stride_secs: float,
    ref_window: float = 30.0,
) -> list[FrameTensor]:
    """Adapter-fuse and unfold every pair's audio."""
    frames = []
    for pair in pairs:
        fused = adapter_forward(pair.music, pair.speech, params)
        frames.append(unfold(fused, kernel_params(fused.shape[0], kernel_secs, stride_secs, ref_window)))
    return frames


@dataclass
class ToyBatchGrads:
    """Loss plus gradients for the trainable dict and for the raw inputs."""

    loss: float
    params: dict[str, np.ndarray]
    raw_text_grads: np.ndarray  # (N, text_dim)
    music_grads: list[np.ndarray]  # per pair (T, music_dim)
    speech_grads: list[np.ndarray]


def batch_loss_and_grads(
    pairs: Sequence[SynthPair],
    params: ToyModelParams,
    kernel_secs: float,
    stride_secs: float,
    ref_window: float = 30.0,
    normalize: bool = True,
    temperature: float = 1.0,
    symmetric: bool = False,
    workers: int = 1,
) -> ToyBatchGrads:
    """Forward the whole batch and chain the contrastive gradients back
    through the adapter and text projection."""
    frames = frame_batch(pairs, params, kernel_secs, stride_secs, ref_window)
    raw_texts = np.stack([p.text for p in pairs], axis=0)
    projected = project_text(raw_texts, params)
    cfg = params.fusion_config(normalize=normalize, temperature=temperature)
    bundle = backprop(frames, projected, cfg, symmetric=symmetric, workers=workers)

    grads: dict[str, np.ndarray] = {
        "text_w": raw_texts.T @ bundle.text_grads,
        "text_b": bundle.text_grads.sum(axis=0),
    }
    music_dim = pairs[0].music.shape[1]
    music_grads, speech_grads = [], []
    if params.use_adapter:
        d_adapter_w = np.zeros_like(params.adapter_w)
        d_adapter_b = np.zeros_like(params.adapter_b)
        for pair, d_fused in zip(pairs, bundle.audio_grads):
            stacked = np.concatenate([pair.music, pair.speech], axis=1)
            d_adapter_w += stacked.T @ d_fused
            d_adapter_b += d_fused.sum(axis=0)
            d_stacked = d_fused @ params.adapter_w.T
            music_grads.append(d_stacked[:, :music_dim])
            speech_grads.append(d_stacked[:, music_dim:])
        grads["adapter_w"] = d_adapter_w
        grads["adapter_b"] = d_adapter_b
    else:
        for d_fused in bundle.audio_grads:
            music_grads.append(d_fused[:, :music_dim])
            speech_grads.append(d_fused[:, music_dim:])
    if params.train_fusion_weights:
        grads["fusion_weights"] = np.array(
            [bundle.kernel_weight_grad, bundle.temporal_weight_grad]
        )
    return ToyBatchGrads(
        loss=bundle.loss,
        params=grads,
        raw_text_grads=bundle.text_grads @ params.text_w.T,
        music_grads=music_grads,
        speech_grads=speech_grads,
    )


def full_grad_check(
    seed: int = 0,
    batch: int = 4,
    dim: int = 8,
    seq_len_range: tuple[int, int] = (30, 40),
    kernel_secs: float = 9.0,
    stride_secs: float = 6.0,
    epsilon: float = 1e-5,
    tolerance: float = 1e-6,
    normalize: bool = True,
    temperature: float = 1.0,
    symmetric: bool = False,
) -> GradCheckReport:
    """Finite-difference check through adapter + projection + scoring + loss.

    Groups: raw text inputs, raw audio inputs (music and speech), adapter
    parameters, projection parameters, and the fusion weights.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(batch):
        seq_len = int(rng.integers(seq_len_range[0], seq_len_range[1] + 1))
        pairs.append(
            SynthPair(
                music=rng.normal(size=(seq_len, dim)),
                speech=rng.normal(size=(seq_len, dim)),
                text=rng.normal(size=dim),
                label=-1,
            )
        )
    params = ToyModelParams.init(
        rng, dim, dim, dim, dim, init_scale=0.3, train_fusion_weights=True
    )
    result = batch_loss_and_grads(
        pairs, params, kernel_secs, stride_secs,
        normalize=normalize, temperature=temperature, symmetric=symmetric,
    )

    def loss_now() -> float:
        frames = frame_batch(pairs, params, kernel_secs, stride_secs)
        projected = project_text(np.stack([p.text for p in pairs]), params)
        cfg = params.fusion_config(normalize=normalize, temperature=temperature)
        return nce_loss(batch_scores(frames, projected, cfg), symmetric=symmetric)

    def fd(array: np.ndarray, index: tuple) -> float:
        original = array[index]
        array[index] = original + epsilon
        hi = loss_now()
        array[index] = original - epsilon
        lo = loss_now()
        array[index] = original
        return (hi - lo) / (2.0 * epsilon)

    errs = {"text": 0.0, "audio": 0.0, "adapter": 0.0, "projection": 0.0, "gammas": 0.0}
    for j, pair in enumerate(pairs):
        for d in range(dim):
            errs["text"] = max(
                errs["text"],
                relative_error(result.raw_text_grads[j, d], fd(pair.text, (d,))),
            )
    for i, pair in enumerate(pairs):
        for t in range(pair.seq_len):
            for d in range(dim):
                errs["audio"] = max(
                    errs["audio"],
                    relative_error(result.music_grads[i][t, d], fd(pair.music, (t, d))),
                )
                errs["audio"] = max(
                    errs["audio"],
                    relative_error(result.speech_grads[i][t, d], fd(pair.speech, (t, d))),
                )
    for name, group in (("adapter_w", "adapter"), ("adapter_b", "adapter"),
                        ("text_w", "projection"), ("text_b", "projection")):
        array = getattr(params, name)
        analytic = result.params[name]
        for index in np.ndindex(array.shape):
            errs[group] = max(errs[group], relative_error(analytic[index], fd(array, index)))
    for index in ((0,), (1,)):
        errs["gammas"] = max(
            errs["gammas"],
            relative_error(result.params["fusion_weights"][index], fd(params.fusion_weights, index)),
        )
    return GradCheckReport(groups=errs, epsilon=epsilon, tolerance=tolerance)


# ---------------------------------------------------------------------------
# Checkpoints


def _pack_entry(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    dims = array.shape
    parts = [_U32.pack(len(encoded)), encoded, struct.pack("<B", len(dims))]
    parts.extend(_U32.pack(d) for d in dims)
    parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(
    path: str | Path,
    params: ToyModelParams,
    optimizer: AdamW | None = None,
    meta: dict | None = None,
) -> int:
    """Serialise parameters (and optimizer moments) as a CKPT v1 file."""
    arrays: dict[str, np.ndarray] = {
        "text_w": params.text_w,
        "text_b": params.text_b,
        "fusion_weights": params.fusion_weights,
    }
    if params.adapter_w is not None:
        arrays["adapter_w"] = params.adapter_w
        arrays["adapter_b"] = params.adapter_b
    step_count = 0
    if optimizer is not None:
        step_count = optimizer.step_count
        for name in optimizer.params:
            arrays[f"adam.m.{name}"] = optimizer.m[name]
            arrays[f"adam.v.{name}"] = optimizer.v[name]
    header_meta = {
        "train_fusion_weights": params.train_fusion_weights,
        "use_adapter": params.use_adapter,
        "adam_step_count": step_count,
    }
    if meta:
        header_meta.update(meta)
    meta_blob = json.dumps(header_meta, sort_keys=True).encode("utf-8")
    chunks = [
        _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, 1, 0, len(meta_blob), len(arrays)),
        meta_blob,
    ]
    for name in sorted(arrays):
        chunks.append(_pack_entry(name, arrays[name]))
    blob = b"".join(chunks)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


def load_checkpoint(path: str | Path) -> tuple[ToyModelParams, dict[str, np.ndarray], dict]:
    """Load a CKPT v1 file: (params, optimizer arrays keyed adam.*, meta)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, dtype, _r, meta_len, entry_count = _CKPT_HEADER.unpack_from(blob, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION or dtype != 1:
        raise FormatError(f"{path}: unsupported checkpoint version/dtype {version}/{dtype}")
    pos = _CKPT_HEADER.size
    try:
        meta = json.loads(blob[pos : pos + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid checkpoint metadata") from exc
    pos += meta_len
    arrays: dict[str, np.ndarray] = {}
    for _ in range(entry_count):
        if pos + _U32.size > len(blob):
            raise FormatError(f"{path}: truncated checkpoint entry")
        (name_len,) = _U32.unpack_from(blob, pos)
        pos += _U32.size
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = []
        for _ in range(ndim):
            (d,) = _U32.unpack_from(blob, pos)
            pos += _U32.size
            dims.append(d)
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        end = pos + size * 8
        if end > len(blob):
            raise FormatError(f"{path}: truncated payload for entry {name!r}")
        arrays[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(dims)
        pos += size * 8
    if pos != len(blob):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    required = {"text_w", "text_b", "fusion_weights"}
    if not required <= arrays.keys():
        raise FormatError(f"{path}: missing parameter entries {sorted(required - arrays.keys())}")
    params = ToyModelParams(
        text_w=arrays["text_w"],
        text_b=arrays["text_b"],
        adapter_w=arrays.get("adapter_w"),
        adapter_b=arrays.get("adapter_b"),
        fusion_weights=arrays["fusion_weights"],
        train_fusion_weights=bool(meta.get("train_fusion_weights", False)),
    )
    optimizer_arrays = {k: v for k, v in arrays.items() if k.startswith("adam.")}
    return params, optimizer_arrays, meta


def restore_optimizer(
    optimizer: AdamW, optimizer_arrays: dict[str, np.ndarray], meta: dict
) -> None:
    """Feed checkpointed moment arrays back into a freshly built AdamW."""
    state: dict = {"step_count": meta.get("adam_step_count", 0)}
    state.update({k[len("adam."):]: v for k, v in optimizer_arrays.items()})
    try:
        optimizer.load_state(state)
    except KeyError as exc:
        raise FormatError(f"checkpoint optimizer state missing entry {exc}") from exc
