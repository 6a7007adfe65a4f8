"""Property tests for the invariants each module promises."""

import math

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st

from gsq import (
    ChecksumMismatch,
    Codebook,
    CorruptFile,
    EmaState,
    LogitBatch,
    PUBLISHED_SCALING_FIT,
    QuantizerConfig,
    UsageHistogram,
    dequantize,
    ema_step,
    entropy_terms,
    hinge_discr_loss,
    hinge_gen_loss,
    init_codebook,
    non_saturate_discr_loss,
    non_saturate_gen_loss,
    perplexity,
    preset,
    psnr,
    quantize,
    scaling_eval,
    ssim,
    usage_percent,
    vanilla_discr_loss,
    vanilla_gen_loss,
)
from gsq.persistence import decode_codebook, encode_codebook

from conftest import brute_force_indices

seeds = st.integers(0, 2**32 - 1)


@st.composite
def configs(draw, max_groups=8, max_d=8, max_vocab=64):
    G = draw(st.integers(1, max_groups))
    d = draw(st.integers(1, max_d))
    V = draw(st.integers(2, max_vocab))
    shared = draw(st.booleans())
    l2 = draw(st.booleans())
    return QuantizerConfig(G * d, G, V, shared_codebook=shared, l2_lookup=l2)


def random_case(cfg, seed, rows=16):
    rng = np.random.default_rng(seed)
    tables = rng.standard_normal((cfg.n_tables, cfg.vocab, cfg.group_dim)) * rng.uniform(0.1, 3.0)
    x = rng.standard_normal((rows, cfg.latent_dim)) * rng.uniform(0.1, 3.0)
    return Codebook(tables), x


# ---------------------------------------------------------------- quantizer


@given(configs(), seeds)
def test_argmin_matches_exhaustive_search(cfg, seed):
    cb, x = random_case(cfg, seed)
    got = quantize(x, cb, cfg).indices
    np.testing.assert_array_equal(got, brute_force_indices(x, cb.tables, cfg.groups, cfg.shared_codebook, cfg.l2_lookup))


@given(configs(), seeds)
def test_l2_lookup_is_cosine_argmax(cfg, seed):
    assume(cfg.group_dim >= 2)
    cfg = QuantizerConfig(cfg.latent_dim, cfg.groups, cfg.vocab, cfg.shared_codebook, l2_lookup=True)
    cb, x = random_case(cfg, seed)
    idx = quantize(x, cb, cfg).indices
    z = x.reshape(x.shape[0], cfg.groups, cfg.group_dim)
    for g in range(cfg.groups):
        c = cb.tables[0 if cfg.shared_codebook else g]
        cos = (z[:, g] @ c.T) / np.linalg.norm(z[:, g], axis=1)[:, None] / np.linalg.norm(c, axis=1)[None, :]
        np.testing.assert_array_equal(idx[:, g], np.argmax(cos, axis=1))


@given(configs(), seeds, st.integers(1, 4))
def test_duplicates_resolve_to_lowest_index(cfg, seed, copies):
    cb, x = random_case(cfg, seed)
    V = cfg.vocab
    # append exact copies of the whole table; no copy may ever win
    tables = np.concatenate([cb.tables] * (copies + 1), axis=1)
    big = QuantizerConfig(cfg.latent_dim, cfg.groups, V * (copies + 1), cfg.shared_codebook, cfg.l2_lookup)
    idx = quantize(x, Codebook(tables), big).indices
    assert idx.max() < V
    np.testing.assert_array_equal(idx, quantize(x, cb, cfg).indices)


@given(configs(), seeds, st.floats(1e-3, 1e3))
def test_scale_invariance_under_l2(cfg, seed, lam):
    cfg = QuantizerConfig(cfg.latent_dim, cfg.groups, cfg.vocab, cfg.shared_codebook, l2_lookup=True)
    cb, x = random_case(cfg, seed)
    np.testing.assert_array_equal(quantize(lam * x, cb, cfg).indices, quantize(x, cb, cfg).indices)


@given(configs(), seeds, st.randoms(use_true_random=False))
def test_shared_codebook_group_permutation(cfg, seed, pyrandom):
    cfg = QuantizerConfig(cfg.latent_dim, cfg.groups, cfg.vocab, True, cfg.l2_lookup)
    cb, x = random_case(cfg, seed)
    perm = list(range(cfg.groups))
    pyrandom.shuffle(perm)
    xp = x.reshape(x.shape[0], cfg.groups, cfg.group_dim)[:, perm].reshape(x.shape)
    np.testing.assert_array_equal(quantize(xp, cb, cfg).indices, quantize(x, cb, cfg).indices[:, perm])


@given(configs(), seeds)
def test_dequantize_round_trip(cfg, seed):
    cb, x = random_case(cfg, seed)
    idx = quantize(x, cb, cfg).indices
    assume(np.unique(cb.tables.round(12), axis=1).shape[1] == cfg.vocab)
    np.testing.assert_array_equal(quantize(dequantize(idx, cb, cfg), cb, cfg).indices, idx)


@given(st.integers(1, 12), seeds)
def test_lfq_is_componentwise_sign(D, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, D)) * 10.0 ** rng.integers(-300, 300, size=(20, D))
    x[rng.random((20, D)) < 0.2] = 0.0
    p = preset("lfq", D)
    out = quantize(x, p.codebook, p.derived_config).dequantized
    np.testing.assert_array_equal(out, np.where(x > 0, 1.0, -1.0))


@given(st.lists(st.integers(2, 9), min_size=1, max_size=6), seeds)
def test_fsq_outputs_on_grid(levels, seed):
    p = preset("fsq", len(levels), levels=levels)
    x = np.random.default_rng(seed).standard_normal((30, len(levels))) * 4
    a = quantize(x, p.codebook, p.derived_config)
    steps = np.array(levels) - 1
    assert np.all(a.indices <= steps) and np.all(a.indices >= 0)
    np.testing.assert_array_equal(a.dequantized * steps, a.indices.astype(float))


# ---------------------------------------------------------------- training


@given(configs(max_groups=4, max_d=4, max_vocab=16), seeds, st.floats(0.5, 0.999))
def test_ema_conservation_and_unit_norm(cfg, seed, decay):
    rng = np.random.default_rng(seed)
    cb = init_codebook(cfg, seed)
    state = EmaState.zeros(cfg, decay=decay)
    for _ in range(5):
        n = int(rng.integers(1, 20))
        before = state.cluster_size.sum(axis=1)
        cb, state, _ = ema_step(rng.standard_normal((n, cfg.latent_dim)) + 0.5, cb, state, cfg)
        per_table = n * (cfg.groups if cfg.shared_codebook else 1)
        np.testing.assert_allclose(state.cluster_size.sum(axis=1), decay * before + (1 - decay) * per_table, rtol=1e-12)
        assert np.all(state.cluster_size >= 0) and np.all(np.isfinite(cb.tables))
    if cfg.l2_lookup and cfg.group_dim > 1:
        assert np.max(np.abs(np.linalg.norm(cb.tables, axis=-1) - 1)) <= 1e-6


# ---------------------------------------------------------------- objectives

logits = st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20)
LOSSES = [vanilla_discr_loss, vanilla_gen_loss, hinge_gen_loss, hinge_discr_loss, non_saturate_gen_loss, non_saturate_discr_loss]


@given(logits, logits)
def test_losses_finite(real, fake):
    n = min(len(real), len(fake))
    batch = LogitBatch(real[:n], fake[:n])
    for fn in LOSSES:
        assert math.isfinite(fn(batch))


@given(st.floats(-700, 700))
def test_non_saturating_generator_is_softplus(v):
    assert abs(non_saturate_gen_loss(LogitBatch([0.0], [v])) - float(np.logaddexp(0.0, -v))) <= 1e-12


@given(st.floats(0.0, 1e4))
def test_discriminator_losses_shrink_with_separation(m):
    for fn in (vanilla_discr_loss, non_saturate_discr_loss, hinge_discr_loss):
        assert fn(LogitBatch([m + 1.0], [-m - 1.0])) <= fn(LogitBatch([m], [-m])) + 1e-15


@given(st.integers(1, 30), st.integers(2, 20), seeds, st.floats(0.01, 100))
def test_entropy_bounds(n, V, seed, tau):
    d = np.random.default_rng(seed).uniform(0, 10, size=(n, V))
    per, cb, _ = entropy_terms(d, tau)
    assert -1e-12 <= per <= math.log(V) + 1e-12
    assert -1e-12 <= cb <= math.log(V) + 1e-12


# ---------------------------------------------------------------- metrics


@given(st.lists(st.integers(0, 50), min_size=2, max_size=200))
def test_perplexity_bounds(counts):
    h = UsageHistogram(np.array([counts]))
    ppl = perplexity(h)
    hit = sum(c > 0 for c in counts)
    assert 1.0 <= ppl <= len(counts) + 1e-9
    uniform = hit > 0 and len({c for c in counts if c > 0}) == 1
    if uniform:
        assert ppl == hit
    elif hit:
        assert ppl < hit


@given(st.lists(st.integers(0, 5), min_size=2, max_size=100), st.randoms(use_true_random=False))
def test_usage_label_permutation(counts, pyrandom):
    perm = list(counts)
    pyrandom.shuffle(perm)
    assert usage_percent(UsageHistogram(np.array([counts]))) == usage_percent(UsageHistogram(np.array([perm])))


@given(seeds, st.floats(1e-4, 1.0), st.floats(1.01, 10.0))
def test_psnr_decreases_with_error(seed, scale, factor):
    a = np.random.default_rng(seed).random((6, 6))
    noise = np.random.default_rng(seed + 1).standard_normal((6, 6))
    assert psnr(a, a + scale * factor * noise) < psnr(a, a + scale * noise)


@given(seeds)
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((14, 13)), rng.random((14, 13))
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) <= 1e-12 and -1 <= s <= 1


# ---------------------------------------------------------------- persistence and analysis


@given(configs(max_vocab=32), seeds, st.sampled_from(["spherical_gaussian", "uniform_interval"]))
def test_codebook_round_trip(cfg, seed, kind):
    cb = init_codebook(cfg, seed, kind)
    cb32 = Codebook(cb.tables.astype(np.float32), kind)
    back, cfg2 = decode_codebook(encode_codebook(cb32, cfg))
    assert cfg2 == cfg and back.init_kind == kind
    assert back.tables.tobytes() == cb32.tables.tobytes()


@given(configs(max_vocab=16), seeds, st.data())
def test_any_single_byte_corruption_is_rejected(cfg, seed, data):
    raw = bytearray(encode_codebook(init_codebook(cfg, seed), cfg))
    pos = data.draw(st.integers(0, len(raw) - 1))
    raw[pos] ^= data.draw(st.integers(1, 255))
    try:
        decode_codebook(bytes(raw))
    except CorruptFile:
        return
    raise AssertionError(f"corruption at byte {pos} was accepted")


@given(st.integers(2, 2**30), st.integers(1, 4096))
def test_scaling_law_monotone(V, D):
    assert scaling_eval(PUBLISHED_SCALING_FIT, V * 2, D) < scaling_eval(PUBLISHED_SCALING_FIT, V, D)
    assert scaling_eval(PUBLISHED_SCALING_FIT, V, D + 1) > scaling_eval(PUBLISHED_SCALING_FIT, V, D)


def test_checksum_is_the_detector_for_payload_bytes():
    cfg = QuantizerConfig(4, 1, 4)
    raw = bytearray(encode_codebook(init_codebook(cfg, 0), cfg))
    raw[-6] ^= 0x80
    try:
        decode_codebook(bytes(raw))
    except ChecksumMismatch:
        return
    raise AssertionError("payload corruption not reported as a checksum mismatch")
