"""Command-line interface.

Every pipeline stage is scriptable: synthetic data emission, framing
inspection, pair scoring, batch score matrices, retrieval evaluation, toy
training, gradient checking, and store inspection.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure (divergence, failed gradient check).  Human-readable numbers are
printed with 6 significant digits; JSON artifacts keep full precision.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import errors
from .alignment import align
from .config import RunConfig, resolve_config
from .contrastive import batch_scores
from .framing import kernel_params, unfold
from .model import full_grad_check
from .retrieval import eval_report
from .store import Modality, load_manifest, read_store, resolve_pairs
from .synth import SynthConfig, emit_stores, synth_dataset
from .train import TrainConfig, dataset_from_stores, train

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3

_DATA_ERRORS = (
    errors.ConfigError,
    errors.DataError,
    errors.DegenerateInput,
    errors.DimensionMismatch,
    errors.DuplicateId,
    errors.EmptyBatch,
    errors.FormatError,
    errors.InvalidK,
    errors.IoError,
    errors.KernelExceedsLength,
    errors.MissingRecord,
    errors.ModalityMismatch,
    errors.ParamMismatch,
    errors.SequenceTooShort,
)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit 2 on usage errors; this surface uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._usage_exit(message))

    def _usage_exit(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return USAGE_EXIT


def _fmt(value: float) -> str:
    return f"{float(value):.6g}"


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta-k", type=float, default=None, help="seconds per kernel window")
    p.add_argument("--eta-s", type=float, default=None, help="seconds per stride")
    p.add_argument("--ref-window", type=float, default=None, help="reference window in seconds")
    p.add_argument("--gamma-k", type=float, default=None, help="kernel attention fusion weight")
    p.add_argument("--gamma-t", type=float, default=None, help="temporal attention fusion weight")
    p.add_argument("--temperature", type=float, default=None, help="score temperature divisor")
    p.add_argument(
        "--normalize",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="cosine-normalize embeddings before scoring",
    )
    p.add_argument("--workers", type=int, default=None, help="deterministic scoring parallelism")


def _run_config(args: argparse.Namespace) -> tuple[RunConfig, dict]:
    overrides = {}
    for key in (
        "eta_k", "eta_s", "ref_window", "gamma_k", "gamma_t", "temperature",
        "normalize", "symmetric_loss", "seed", "workers",
        "text_store", "audio_store", "speech_store", "manifest", "checkpoint", "output",
    ):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    return resolve_config(args.config, overrides)


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [k.replace("_", "-") for k in keys if getattr(cfg, k) is None]
    if missing:
        raise errors.ConfigError(
            "missing required settings: " + ", ".join(f"--{k}" for k in missing)
        )


def _load_pair_stores(cfg: RunConfig):
    texts = read_store(cfg.text_store)
    audios = read_store(cfg.audio_store)
    if texts.dim != audios.dim:
        raise errors.DimensionMismatch(
            f"text store dim {texts.dim} != audio store dim {audios.dim}"
        )
    return texts, audios


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_synth(args) -> int:
    cfg, _ = _run_config(args)
    synth_cfg = SynthConfig(
        num_classes=args.classes,
        music_dim=args.dim,
        speech_dim=args.dim,
        text_dim=args.dim,
        fused_dim=args.dim,
        seq_len_range=(args.seq_min, args.seq_max),
        noise_sigma=args.noise_sigma,
        n_train=args.n_train,
        n_eval=args.n_eval,
        seed=cfg.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = emit_stores(synth_dataset(synth_cfg), out_dir)
    echo = {"command": "synth", "config": asdict(synth_cfg)}
    echo["config"]["seq_len_range"] = list(synth_cfg.seq_len_range)
    (out_dir / "synth_config.json").write_text(
        json.dumps(echo, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    print(f"pairs: {synth_cfg.n_train} train + {synth_cfg.n_eval} eval")
    return 0


def _cmd_frame_info(args) -> int:
    cfg, _ = _run_config(args)
    params = kernel_params(args.t, cfg.eta_k, cfg.eta_s, cfg.ref_window)
    print(f"H={params.kernel_size} S={params.stride} W={params.num_frames}")
    return 0


def _cmd_score(args) -> int:
    cfg, _ = _run_config(args)
    _require(cfg, "text_store", "audio_store")
    texts, audios = _load_pair_stores(cfg)
    text_rec = texts.get(args.text_id)
    audio_rec = audios.get(args.audio_id)
    if text_rec.modality is not Modality.TEXT:
        raise errors.ModalityMismatch(f"record {args.text_id!r} is not a text record")
    if audio_rec.modality is not Modality.AUDIO:
        raise errors.ModalityMismatch(f"record {args.audio_id!r} is not an audio record")
    frames = unfold(
        audio_rec.data, kernel_params(audio_rec.steps, cfg.eta_k, cfg.eta_s, cfg.ref_window)
    )
    result = align(frames, text_rec.data[0], cfg.fusion())
    print(f"kernel_score={_fmt(result.kernel_score)}")
    print(f"temporal_score={_fmt(result.temporal_score)}")
    print(f"fused={_fmt(result.fused)}")
    if args.dump_attention:
        artifact = {
            "config": cfg.to_dict(),
            "text_id": args.text_id,
            "audio_id": args.audio_id,
            "similarity": result.sim.tolist(),
            "kernel_attention": result.kernel_attn.tolist(),
            "temporal_attention": result.temporal_attn.tolist(),
            "kernel_score": result.kernel_score,
            "temporal_score": result.temporal_score,
            "fused": result.fused,
        }
        Path(args.dump_attention).write_text(
            json.dumps(artifact, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"attention dump: {args.dump_attention}")
    return 0


def _score_matrix(cfg: RunConfig, split: str):
    texts, audios = _load_pair_stores(cfg)
    manifest = load_manifest(cfg.manifest)
    pairs = resolve_pairs(manifest, texts, audios, split)
    if not pairs:
        raise errors.EmptyBatch(f"manifest has no pairs in split {split!r}")
    frames = [
        unfold(a.data, kernel_params(a.steps, cfg.eta_k, cfg.eta_s, cfg.ref_window))
        for _, a in pairs
    ]
    text_matrix = np.stack([t.data[0] for t, _ in pairs], axis=0)
    scores = batch_scores(frames, text_matrix, cfg.fusion(), workers=cfg.workers)
    return pairs, scores


def _cmd_batch_score(args) -> int:
    cfg, _ = _run_config(args)
    _require(cfg, "text_store", "audio_store", "manifest", "output")
    pairs, scores = _score_matrix(cfg, args.split)
    artifact = {
        "config": cfg.to_dict(),
        "split": args.split,
        "text_ids": [t.id for t, _ in pairs],
        "audio_ids": [a.id for _, a in pairs],
        "scores": scores.tolist(),  # rows = audio, cols = text
    }
    Path(cfg.output).write_text(json.dumps(artifact, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{scores.shape[0]}x{scores.shape[1]} scores -> {cfg.output}")
    return 0


def _cmd_eval(args) -> int:
    cfg, _ = _run_config(args)
    _require(cfg, "text_store", "audio_store", "manifest")
    ks = tuple(int(k) for k in args.ks.split(","))
    texts, audios = _load_pair_stores(cfg)
    manifest = load_manifest(cfg.manifest)
    t2a, a2t = eval_report(
        texts,
        audios,
        manifest,
        cfg.fusion(),
        split=args.split,
        kernel_secs=cfg.eta_k,
        stride_secs=cfg.eta_s,
        ref_window=cfg.ref_window,
        ks=ks,
        workers=cfg.workers,
    )
    for report in (t2a, a2t):
        recalls = " ".join(f"R@{k}={_fmt(v)}" for k, v in sorted(report.recalls.items()))
        print(f"{report.direction} n={report.n} {recalls} ties={report.ties_broken}")
    if cfg.output:
        artifact = {"config": cfg.to_dict(), "split": args.split,
                    "t2a": t2a.to_dict(), "a2t": a2t.to_dict()}
        Path(cfg.output).write_text(json.dumps(artifact, sort_keys=True) + "\n", encoding="utf-8")
        print(f"report -> {cfg.output}")
    return 0


def _cmd_train_toy(args) -> int:
    cfg, explicit = _run_config(args)
    shared = {
        "eta_k": "kernel_secs",
        "eta_s": "stride_secs",
        "ref_window": "ref_window",
        "gamma_k": "kernel_weight",
        "gamma_t": "temporal_weight",
        "temperature": "temperature",
        "normalize": "normalize",
        "symmetric_loss": "symmetric_loss",
        "seed": "seed",
        "workers": "workers",
    }
    train_kwargs = {dest: getattr(cfg, src) for src, dest in shared.items() if src in explicit}
    for flag in ("lr", "weight_decay", "batch_size", "epochs", "init_scale"):
        value = getattr(args, flag)
        if value is not None:
            train_kwargs[flag] = value
    if args.train_gammas:
        train_kwargs["train_fusion_weights"] = True
    if args.no_adapter:
        train_kwargs["use_adapter"] = False
    train_cfg = TrainConfig(**train_kwargs)

    store_keys = ("text_store", "audio_store", "speech_store", "manifest")
    given = [k for k in store_keys if getattr(cfg, k) is not None]
    if given and len(given) != len(store_keys):
        raise errors.ConfigError(
            "store-driven training needs --text-store, --audio-store (music), "
            "--speech-store, and --manifest together"
        )
    if given:
        dataset = dataset_from_stores(
            read_store(cfg.text_store),
            read_store(cfg.audio_store),
            read_store(cfg.speech_store),
            load_manifest(cfg.manifest),
            fused_dim=args.fused_dim,
        )
        synth_cfg = None
    else:
        dataset = None
        synth_cfg = SynthConfig(seed=train_cfg.seed).scaled(args.dim)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(
        train_cfg,
        dataset=dataset,
        synth_cfg=synth_cfg,
        checkpoint_path=out_dir / "model.ckpt",
        report_path=out_dir / "report.jsonl",
    )
    for entry in result.epochs:
        loss = "-" if entry["mean_loss"] is None else _fmt(entry["mean_loss"])
        line = f"epoch {entry['epoch']}: loss={loss} lr={_fmt(entry['lr'])}"
        if entry["recalls"] is not None:
            r1 = entry["recalls"]["t2a"]["recalls"].get("1")
            if r1 is not None:
                line += f" t2a_r1={_fmt(r1)}"
        print(line)
    print(f"checkpoint -> {result.checkpoint_path}")
    print(f"report -> {out_dir / 'report.jsonl'}")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg, _ = _run_config(args)
    report = full_grad_check(
        seed=cfg.seed,
        batch=args.batch,
        dim=args.dim,
        epsilon=args.epsilon,
        tolerance=args.tolerance,
        normalize=cfg.normalize,
        temperature=cfg.temperature,
        symmetric=cfg.symmetric_loss,
    )
    for group in sorted(report.groups):
        print(f"{group}: max_rel_err={_fmt(report.groups[group])}")
    print(f"epsilon={_fmt(report.epsilon)} tolerance={_fmt(report.tolerance)}")
    if not report.passed:
        print("gradient check FAILED", file=sys.stderr)
        return NUMERIC_EXIT
    print("gradient check passed")
    return 0


def _cmd_inspect(args) -> int:
    store = read_store(args.store)
    by_modality = {Modality.TEXT: 0, Modality.AUDIO: 0}
    total_steps = 0
    for rec in store:
        by_modality[rec.modality] += 1
        total_steps += rec.steps
    print(f"records={len(store)} dim={store.dim}")
    print(f"text={by_modality[Modality.TEXT]} audio={by_modality[Modality.AUDIO]} "
          f"total_timesteps={total_steps}")
    for rec in list(store)[: args.limit]:
        print(f"  {rec.id} {rec.modality.name.lower()} T={rec.steps}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="tempalign", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None,
                        help="TOML config file (default: $TEMPALIGN_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="emit synthetic CESF stores and a pair manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--dim", type=int, default=16, help="dimension for every embedding space")
    p.add_argument("--seq-min", type=int, default=30)
    p.add_argument("--seq-max", type=int, default=45)
    p.add_argument("--noise-sigma", type=float, default=0.3)
    p.add_argument("--n-train", type=int, default=256)
    p.add_argument("--n-eval", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("frame-info", help="print kernel size, stride, and frame count")
    p.add_argument("--t", type=int, required=True, help="sequence length in timesteps")
    _add_scoring_flags(p)
    p.set_defaults(func=_cmd_frame_info)

    p = sub.add_parser("score", help="fused score for one text/audio pair")
    p.add_argument("--text-store", default=None)
    p.add_argument("--audio-store", default=None)
    p.add_argument("--text-id", required=True)
    p.add_argument("--audio-id", required=True)
    p.add_argument("--dump-attention", default=None, metavar="PATH",
                   help="write similarity and attention matrices as JSON")
    _add_scoring_flags(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("batch-score", help="score matrix over one manifest split")
    p.add_argument("--text-store", default=None)
    p.add_argument("--audio-store", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="eval", choices=("train", "eval"))
    p.add_argument("--output", default=None, help="JSON artifact path")
    _add_scoring_flags(p)
    p.set_defaults(func=_cmd_batch_score)

    p = sub.add_parser("eval", help="recall@k retrieval report over one manifest split")
    p.add_argument("--text-store", default=None)
    p.add_argument("--audio-store", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="eval", choices=("train", "eval"))
    p.add_argument("--ks", default="5,20,100", help="comma-separated recall cutoffs")
    p.add_argument("--output", default=None, help="JSON artifact path")
    _add_scoring_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("train-toy", help="desk-scale training run")
    p.add_argument("--out", required=True, help="output directory for checkpoint and report")
    p.add_argument("--dim", type=int, default=16,
                   help="synthetic embedding dimension (ignored with stores)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--train-gammas", action="store_true",
                   help="make the fusion weights trainable")
    p.add_argument("--no-adapter", action="store_true",
                   help="plain concatenation instead of the adapter layer")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--symmetric-loss", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--text-store", default=None)
    p.add_argument("--audio-store", default=None, help="music-feature store")
    p.add_argument("--speech-store", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--fused-dim", type=int, default=None,
                   help="adapter output dimension for store-driven runs")
    _add_scoring_flags(p)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--symmetric-loss", action=argparse.BooleanOptionalAction, default=None)
    _add_scoring_flags(p)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="summarize a CESF store")
    p.add_argument("--store", required=True)
    p.add_argument("--limit", type=int, default=10, help="records to list")
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse help (0) or usage error (1)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except errors.DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
