import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import TinyVocab, random_batch, tiny_model
from oracles import lr_closed_form, smooth_loops
from relectra import tensor as T
from relectra.electra import (AdamW, Checkpoint, TrainSchedule, discriminator_labels, electra_loss,
                              electra_step, generator_config, lr_at, make_checkpoint, mask_tokens, pretrain,
                              sample_replacements, smooth_accuracy_curve)
from relectra.errors import ConfigError, LengthError
from relectra.reformer import ReformerConfig

V = TinyVocab()


# -- masking --------------------------------------------------------------------------

def test_mask_prob_zero():
    ids = np.array([[2, 7, 8, 9, 3, 0]])
    corrupt, pos = mask_tokens(ids, 0.0, V, np.random.default_rng(0))
    assert (corrupt == ids).all() and pos.size == 0


def test_mask_prob_one_masks_every_non_special():
    ids = np.array([[2, 7, 8, 9, 3, 0]])
    corrupt, _ = mask_tokens(ids, 1.0, V, np.random.default_rng(0))
    assert corrupt.tolist() == [[2, 4, 4, 4, 3, 0]]


def test_masked_fraction_concentrates():
    ids = np.random.default_rng(1).integers(5, 32, (100, 100))
    corrupt, _ = mask_tokens(ids, 0.15, V, np.random.default_rng(2))
    assert 0.14 <= (corrupt == V.mask_id).mean() <= 0.16


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_specials_never_masked_and_deterministic(seed, p):
    ids, _ = random_batch(np.random.default_rng(seed), batch=3)
    a, _ = mask_tokens(ids, p, V, np.random.default_rng(seed))
    b, _ = mask_tokens(ids, p, V, np.random.default_rng(seed))
    assert (a == b).all()
    special = np.isin(ids, list(V.special_ids))
    assert (a[special] == ids[special]).all()
    assert set(np.unique(a[~special])) <= set(np.unique(ids[~special])) | {V.mask_id}


# -- sampling -------------------------------------------------------------------------

def test_sampling_certain_original():
    orig = np.array([5, 6, 7, 8])
    logits = np.full((4, 10), -1e9)
    logits[np.arange(4), orig] = 0.0
    out = sample_replacements(logits, np.array([5, 4, 4, 8]), [1, 2], np.random.default_rng(0), original=orig)
    assert out.tolist() == orig.tolist()


def test_sampling_certain_wrong_token():
    orig = np.array([5, 6, 7, 8])
    logits = np.full((4, 10), -1e9)
    logits[:, 9] = 0.0
    out = sample_replacements(logits, np.array([5, 4, 4, 8]), [1, 2], np.random.default_rng(0), original=orig)
    assert out.tolist() == [5, 9, 9, 8]


def test_sampling_uniform_monte_carlo():
    rng = np.random.default_rng(3)
    hits = sum(sample_replacements(np.zeros((1, 4)), [4], [0], rng, original=[0])[0] == 0 for _ in range(10_000))
    assert abs(hits / 10_000 - 0.25) <= 0.02


# -- labels ---------------------------------------------------------------------------

def test_labels_examples():
    assert discriminator_labels([5, 6, 7], [5, 6, 7]).tolist() == [0, 0, 0]
    assert discriminator_labels([5, 6, 7], [5, 9, 7]).tolist() == [0, 1, 0]


def test_labels_shape_mismatch():
    with pytest.raises(T.ShapeError):
        discriminator_labels([1, 2], [1, 2, 3])


def test_sampled_original_is_labelled_original():
    # a generator certain of the right answer leaves every label at 0
    model = tiny_model(mask_prob=0.5)
    gen = model.gen
    gen["head.bias"].data[:] = -1e4
    ids, mask = random_batch(np.random.default_rng(4))
    target = int(ids[0, 1])
    gen["head.bias"].data[target] = 1e4
    ids[:, 1:-1][mask[:, 1:-1]] = target
    ids[mask == 0] = 0
    out = electra_loss(model, ids, mask, V, np.random.default_rng(5), mode="eval")
    assert out.metrics.masked_positions > 0
    assert (out.labels == 0).all()


# -- losses ---------------------------------------------------------------------------

def test_lambda_zero_combined_is_gen_loss():
    model = tiny_model(disc_weight=0.0)
    ids, mask = random_batch(np.random.default_rng(6))
    out = electra_loss(model, ids, mask, V, np.random.default_rng(7), mode="eval")
    assert out.combined.item() == out.gen_loss.item()


def test_no_masked_positions():
    model = tiny_model(mask_prob=0.0)
    ids, mask = random_batch(np.random.default_rng(8))
    out = electra_loss(model, ids, mask, V, np.random.default_rng(9), mode="eval")
    assert out.gen_loss.item() == 0.0 and (out.labels == 0).all()


def test_combined_equals_hand_computation():
    model = tiny_model(mask_prob=0.4, disc_weight=50.0, max_seq_len=4)
    ids = np.array([[2, 7, 3]])
    mask = np.ones_like(ids, dtype=bool)
    out = electra_loss(model, ids, mask, V, np.random.default_rng(3), mode="eval")
    corrupt, pos = mask_tokens(ids, 0.4, V, np.random.default_rng(3))
    rows = np.flatnonzero(corrupt.ravel() != ids.ravel())
    with T.no_grad():
        if rows.size:
            g = model.generator_logits(corrupt, rows=rows).data
            z = g - g.max(-1, keepdims=True)
            ce = float(np.mean(np.log(np.exp(z).sum(-1)) - z[np.arange(rows.size), ids.ravel()[rows]]))
        else:
            ce = 0.0
        d = model.discriminator_logits(out.replaced).data.ravel()
    y = out.labels.ravel()
    bce = float(np.mean(np.where(y == 1, np.logaddexp(0, -d), np.logaddexp(0, d))))
    assert out.gen_loss.item() == pytest.approx(ce, abs=1e-12)
    assert out.disc_loss.item() == pytest.approx(bce, abs=1e-12)
    assert out.combined.item() == pytest.approx(ce + 50.0 * bce, abs=1e-10)


@given(st.integers(0, 1000))
def test_disc_loss_covers_all_non_pad_positions(seed):
    model = tiny_model(seed=seed % 3)
    ids, mask = random_batch(np.random.default_rng(seed), batch=3)
    out = electra_loss(model, ids, mask, V, np.random.default_rng(seed), mode="eval")
    assert out.metrics.disc_positions == int(mask.sum())
    with T.no_grad():
        d = model.discriminator_logits(out.replaced, pad_mask=mask).data
    y = out.labels
    per = np.where(y == 1, np.logaddexp(0, -d), np.logaddexp(0, d))
    assert out.disc_loss.item() == pytest.approx(per[mask].mean(), abs=1e-12)


def test_over_length_batch():
    model = tiny_model(max_seq_len=8)
    with pytest.raises(LengthError):
        electra_loss(model, np.full((1, 9), 7), None, V, np.random.default_rng(0))


def test_config_validation():
    d = ReformerConfig(vocab_size=32, d_model=8, n_heads=2, n_layers=1, d_ffn=16, max_seq_len=8, chunk_size=4)
    from relectra.electra import ElectraConfig
    with pytest.raises(ConfigError):
        ElectraConfig(generator_config(d), d, mask_prob=1.5)


def test_generator_is_quarter_width():
    d = ReformerConfig(d_model=256, n_heads=4, d_ffn=1024)
    g = generator_config(d)
    assert (g.d_model, g.n_heads, g.d_ffn, g.emb_dim) == (64, 1, 256, 256)


# -- tied embeddings --------------------------------------------------------------------

def test_tied_embedding_is_one_object_and_updates_both():
    model = tiny_model()
    assert model.gen["embed.tok"] is model.disc["embed.tok"]
    before = model.disc["embed.tok"].data.copy()
    opt = AdamW(model.named_parameters())
    ids, mask = random_batch(np.random.default_rng(10))
    electra_step(ids, model, opt, TrainSchedule(total_steps=10, warmup_steps=1, phase_switch_step=5), 1, V,
                 np.random.default_rng(11), pad_mask=mask)
    assert not np.array_equal(before, model.gen["embed.tok"].data)
    assert np.array_equal(model.gen["embed.tok"].data, model.disc["embed.tok"].data)


def test_untied_embeddings_are_separate():
    model = tiny_model(tie=False)
    assert model.gen["embed.tok"] is not model.disc["embed.tok"]
    assert "gen.embed.tok" in model.named_parameters()


def test_adamw_skips_decay_on_vectors():
    w = T.Tensor(np.ones((2, 2)), requires_grad=True)
    b = T.Tensor(np.ones(2), requires_grad=True)
    opt = AdamW({"w": w, "b": b}, weight_decay=0.5)
    w.grad = np.zeros((2, 2))
    b.grad = np.zeros(2)
    opt.step(0.1)
    np.testing.assert_allclose(w.data, 0.95)
    np.testing.assert_allclose(b.data, 1.0)


# -- schedule -------------------------------------------------------------------------

PAPER = TrainSchedule()


@pytest.mark.parametrize("step", [0, 10_000, 20_000, 50_000, 79_999, 80_000, 100_000, 120_000])
def test_lr_matches_closed_form(step):
    assert lr_at(step, PAPER) == pytest.approx(lr_closed_form(step), rel=1e-12, abs=1e-20)


def test_lr_anchor_values():
    assert lr_at(0, PAPER) == 0.0
    assert lr_at(20_000, PAPER) == pytest.approx(1e-5)
    assert lr_at(80_000, PAPER) == pytest.approx(4e-7)
    assert lr_at(120_000, PAPER) == 0.0


def test_lr_out_of_range():
    with pytest.raises(ValueError):
        lr_at(120_001, PAPER)
    with pytest.raises(ValueError):
        lr_at(-1, PAPER)


def test_bad_schedule_rejected():
    with pytest.raises(ConfigError):
        TrainSchedule(warmup_steps=200_000)


@given(st.integers(0, 2000))
def test_desk_scale_schedule(step):
    s = TrainSchedule.desk_scale()
    assert lr_at(step, s) == pytest.approx(lr_closed_form(step, 2000, 200, 1400), rel=1e-12, abs=1e-20)


# -- smoothing ------------------------------------------------------------------------

def test_smoothing_examples():
    assert smooth_accuracy_curve([(s, 0.7) for s in range(0, 1000, 10)]) == [(s, 0.7) for s in range(0, 1000, 10)]
    assert smooth_accuracy_curve([(5, 0.3)]) == [(5, 0.3)]
    alt = smooth_accuracy_curve([(s, s % 2) for s in range(400)], 200)
    assert all(abs(v - 0.5) <= 0.01 for s, v in alt if 100 <= s < 300)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.integers(1, 20), st.sampled_from([10, 50, 200]))
def test_smoothing_matches_loops(vals, every, window):
    pts = [(i * every, v) for i, v in enumerate(vals)]
    for (s1, a), (s2, b) in zip(smooth_accuracy_curve(pts, window), smooth_loops(pts, window)):
        assert s1 == s2 and a == pytest.approx(b, abs=1e-12)


# -- checkpoints and determinism ----------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(dtype="float32")
    opt = AdamW(model.named_parameters())
    rng = np.random.default_rng(12)
    c = make_checkpoint(model, opt, 3, rng)
    c.save(tmp_path / "c.rlct")
    again = Checkpoint.load(tmp_path / "c.rlct")
    assert again.equals(c) and again.step == 3


def _run(steps, seed=0, batches=None):
    model = tiny_model(seed=seed, dtype="float32", dropout=0.1)
    rng = np.random.default_rng(seed)
    data = batches or [random_batch(rng) for _ in range(steps)]
    sched = TrainSchedule(total_steps=steps, warmup_steps=steps // 10, phase_switch_step=steps * 7 // 10,
                          lr_phase1=1e-3, lr_phase2=1e-4)
    buf = io.StringIO()
    res = pretrain(model, iter(data), sched, V, seed, eval_batch=data[0], eval_every=10, metrics_out=buf)
    return res, buf.getvalue()


def test_hundred_steps_deterministic():
    a, ma = _run(100)
    b, mb = _run(100)
    assert [m.line() for m in a.history] == [m.line() for m in b.history]
    assert [(m.combined_loss, m.disc_positions) for m in a.history] == \
        [(m.combined_loss, m.disc_positions) for m in b.history]
    assert ma == mb
    assert a.checkpoint.equals(b.checkpoint)
    assert all(math.isfinite(m.combined_loss) for m in a.history)


def test_resume_matches_uninterrupted():
    rng = np.random.default_rng(0)
    data = [random_batch(rng) for _ in range(30)]
    full, _ = _run(30, batches=data)
    sched = TrainSchedule(total_steps=30, warmup_steps=3, phase_switch_step=21, lr_phase1=1e-3, lr_phase2=1e-4)
    saved = []
    model = tiny_model(seed=0, dtype="float32", dropout=0.1)
    pretrain(model, iter(data), sched, V, 0, checkpoint_every=12, on_checkpoint=saved.append)
    c = saved[0]
    from relectra import checkpoint as ckpt
    model2 = tiny_model(seed=0, dtype="float32", dropout=0.1)
    model2.load_records(c.tensors)
    opt = AdamW(model2.named_parameters())
    opt.load_records(c.optimizer)
    res = pretrain(model2, iter(data[c.step:]), sched, V, 0, start_step=c.step, optimizer=opt,
                   rng=ckpt.rng_from_words(c.rng_words))
    assert res.checkpoint.equals(full.checkpoint)
