"""Adapter, text projection, chained gradients, and checkpoints."""
import numpy as np
import pytest

from tempalign.errors import DimensionMismatch, FormatError
from tempalign.model import (
    ToyModelParams,
    adapter_forward,
    batch_loss_and_grads,
    frame_batch,
    full_grad_check,
    load_checkpoint,
    project_text,
    restore_optimizer,
    save_checkpoint,
)
from tempalign.optim import AdamW
from tempalign.synth import SynthConfig, SynthPair, synth_dataset
from tempalign.train import TrainConfig, evaluate


def make_params(rng, music=4, speech=3, text=6, fused=5, **kw):
    return ToyModelParams.init(rng, music, speech, text, fused, **kw)


def make_pairs(rng, n=3, dim=4, seq_len=36):
    pairs = []
    for _ in range(n):
        pairs.append(
            SynthPair(
                music=rng.normal(size=(seq_len, dim)),
                speech=rng.normal(size=(seq_len, dim)),
                text=rng.normal(size=dim),
                label=0,
            )
        )
    return pairs


class TestAdapterForward:
    def test_matches_per_timestep_oracle(self, rng):
        params = make_params(rng, init_scale=0.5)
        music, speech = rng.normal(size=(7, 4)), rng.normal(size=(7, 3))
        out = adapter_forward(music, speech, params)
        for t in range(7):
            want = np.concatenate([music[t], speech[t]]) @ params.adapter_w + params.adapter_b
            np.testing.assert_allclose(out[t], want, rtol=1e-12)

    def test_selector_weights_pass_music_through(self, rng):
        params = make_params(rng, music=4, speech=3, fused=4)
        params.adapter_w[:] = 0.0
        params.adapter_w[:4, :4] = np.eye(4)
        params.adapter_b[:] = 0.0
        music, speech = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
        np.testing.assert_array_equal(adapter_forward(music, speech, params), music)

    def test_zero_weights_give_constant_bias(self, rng):
        params = make_params(rng)
        params.adapter_w[:] = 0.0
        params.adapter_b[:] = np.arange(5.0)
        out = adapter_forward(rng.normal(size=(6, 4)), rng.normal(size=(6, 3)), params)
        np.testing.assert_array_equal(out, np.tile(np.arange(5.0), (6, 1)))

    def test_no_adapter_returns_concat(self, rng):
        params = make_params(rng, music=4, speech=3, fused=7, use_adapter=False)
        music, speech = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
        out = adapter_forward(music, speech, params)
        np.testing.assert_array_equal(out, np.concatenate([music, speech], axis=1))

    def test_concat_mode_needs_matching_fused_dim(self, rng):
        with pytest.raises(DimensionMismatch):
            make_params(rng, music=4, speech=3, fused=5, use_adapter=False)

    def test_timestep_mismatch_rejected(self, rng):
        params = make_params(rng)
        with pytest.raises(DimensionMismatch):
            adapter_forward(rng.normal(size=(5, 4)), rng.normal(size=(6, 3)), params)


class TestProjectText:
    def test_single_and_batch_agree(self, rng):
        # vector and matrix matmuls take different BLAS paths, so agreement
        # is only up to rounding
        params = make_params(rng)
        texts = rng.normal(size=(4, 6))
        batch = project_text(texts, params)
        for j in range(4):
            np.testing.assert_allclose(project_text(texts[j], params), batch[j], atol=1e-14)

    def test_wrong_dim_rejected(self, rng):
        with pytest.raises(DimensionMismatch):
            project_text(np.ones(5), make_params(rng))


class TestChainedGradients:
    def test_trainable_dict_contents(self, rng):
        p = make_params(rng, train_fusion_weights=True)
        assert set(p.trainable()) == {
            "text_w", "text_b", "adapter_w", "adapter_b", "fusion_weights",
        }
        q = make_params(rng, music=2, speech=2, fused=4, use_adapter=False)
        assert set(q.trainable()) == {"text_w", "text_b"}

    def test_full_pipeline_finite_differences(self):
        report = full_grad_check(seed=0, batch=3, dim=5, seq_len_range=(30, 36))
        assert report.passed, report.groups
        assert set(report.groups) == {"text", "audio", "adapter", "projection", "gammas"}
        assert max(report.groups.values()) < 1e-8

    def test_full_pipeline_with_loss_variants(self):
        report = full_grad_check(
            seed=1, batch=3, dim=5, seq_len_range=(30, 36),
            symmetric=True, temperature=2.0, normalize=False,
        )
        assert report.passed, report.groups

    def test_gradients_ignore_fusion_weights_when_frozen(self, rng):
        pairs = make_pairs(rng, dim=4)
        params = ToyModelParams.init(rng, 4, 4, 4, 4, init_scale=0.3)
        out = batch_loss_and_grads(pairs, params, 9.0, 6.0)
        assert "fusion_weights" not in out.params
        assert set(out.params) == {"text_w", "text_b", "adapter_w", "adapter_b"}

    def test_concat_mode_backprop_shapes(self, rng):
        pairs = make_pairs(rng, dim=4)
        params = ToyModelParams.init(rng, 4, 4, 4, 8, use_adapter=False, init_scale=0.3)
        out = batch_loss_and_grads(pairs, params, 9.0, 6.0)
        assert set(out.params) == {"text_w", "text_b"}
        for g, pair in zip(out.music_grads, pairs):
            assert g.shape == pair.music.shape


class TestCheckpoint:
    def roundtrip(self, tmp_path, params, optimizer=None, meta=None):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, optimizer, meta)
        return path, load_checkpoint(path)

    def test_parameters_survive_exactly(self, tmp_path, rng):
        params = make_params(rng, train_fusion_weights=True)
        _, (loaded, _, meta) = self.roundtrip(tmp_path, params, meta={"note": "x"})
        assert np.array_equal(loaded.text_w, params.text_w)
        assert np.array_equal(loaded.text_b, params.text_b)
        assert np.array_equal(loaded.adapter_w, params.adapter_w)
        assert np.array_equal(loaded.fusion_weights, params.fusion_weights)
        assert loaded.train_fusion_weights
        assert meta["note"] == "x"

    def test_eval_metrics_identical_after_reload(self, tmp_path):
        # save -> load -> evaluate must reproduce the same recalls
        ds = synth_dataset(SynthConfig(n_train=4, n_eval=10, seed=1).scaled(8))
        rng = np.random.default_rng(2)
        params = ToyModelParams.init(rng, 8, 8, 8, 8, init_scale=0.3)
        cfg = TrainConfig(batch_size=4, eval_ks=(1, 5))
        before = evaluate(ds.eval, params, cfg)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params)
        loaded, _, _ = load_checkpoint(path)
        assert evaluate(ds.eval, loaded, cfg) == before

    def test_optimizer_state_resumes_identically(self, tmp_path, rng):
        params = make_params(rng)
        opt = AdamW(params.trainable(), weight_decay=0.01)
        grads = {k: rng.normal(size=v.shape) for k, v in params.trainable().items()}
        opt.step(grads, 1e-3)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, opt)

        loaded, opt_arrays, meta = load_checkpoint(path)
        opt2 = AdamW(loaded.trainable(), weight_decay=0.01)
        restore_optimizer(opt2, opt_arrays, meta)
        opt.step(grads, 1e-3)
        opt2.step(
            {k: grads[k] for k in loaded.trainable()}, 1e-3
        )
        for k in params.trainable():
            assert np.array_equal(params.trainable()[k], loaded.trainable()[k])

    def test_corrupted_magic_rejected(self, tmp_path, rng):
        path, _ = self.roundtrip(tmp_path, make_params(rng))
        blob = path.read_bytes()
        path.write_bytes(b"JUNK" + blob[4:])
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncation_rejected(self, tmp_path, rng):
        path, _ = self.roundtrip(tmp_path, make_params(rng))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        path, _ = self.roundtrip(tmp_path, make_params(rng))
        path.write_bytes(path.read_bytes() + b"z")
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(path)

    def test_missing_required_entry_rejected(self, tmp_path, rng):
        # a checkpoint whose entries omit the text projection is unusable
        import json
        import struct

        meta = json.dumps({}).encode()
        blob = struct.pack("<4sBBHIQ", b"CKPT", 1, 1, 0, len(meta), 0) + meta
        path = tmp_path / "empty.ckpt"
        path.write_bytes(blob)
        with pytest.raises(FormatError, match="missing"):
            load_checkpoint(path)
