"""Interaction strategies: identity at init, permutation behavior, oracles."""

import numpy as np
import pytest

from capmatch import tensor as T
from capmatch.errors import InvalidConfig, NoCaptions, SequenceTooLong
from capmatch.gradcheck import finite_difference_grad, max_rel_error
from capmatch.interaction import (COATTN, CROSS, MLP, NONE, SUM,
                                  InteractionConfig, enhance,
                                  init_interaction_params, interact_coattn,
                                  interact_cross, interact_mlp, interact_sum)


def t32(x):
    return T.tensor(np.asarray(x, dtype=np.float32))


def rand(shape, seed=0, dtype=np.float32):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


def cfg_for(strategy, dim=8, layers=1, heads=2, ffn_mult=2, max_frames=16):
    return InteractionConfig(strategy=strategy, layers=layers, heads=heads,
                             dim=dim, ffn_mult=ffn_mult, max_frames=max_frames)


# --- sum -------------------------------------------------------------------------

def test_sum_arithmetic():
    out = interact_sum(t32([[1.0, 0.0]]), t32([[0.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_allclose(out.numpy(), [[1.0, 1.0]], atol=1e-7)


def test_sum_single_caption():
    frames = rand((3, 4), seed=1)
    cap = rand((1, 4), seed=2)
    out = interact_sum(t32(frames), t32(cap))
    np.testing.assert_allclose(out.numpy(), frames + cap, atol=1e-6)


def test_sum_caption_permutation_invariant():
    frames = rand((3, 4), seed=3)
    caps = rand((5, 4), seed=4)
    a = interact_sum(t32(frames), t32(caps)).numpy()
    b = interact_sum(t32(frames), t32(caps[::-1].copy())).numpy()
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_sum_no_captions():
    with pytest.raises(NoCaptions):
        interact_sum(t32(rand((2, 4))), t32(np.zeros((0, 4))))


# --- mlp -------------------------------------------------------------------------

def test_mlp_zero_weights_zero_output():
    cfg = cfg_for(MLP, dim=4)
    params = init_interaction_params(cfg, seed=0)
    for p in params.values():
        p.data = np.zeros_like(p.data)
    out = interact_mlp(t32(rand((3, 4), seed=5)), t32(rand((2, 4), seed=6)), params)
    np.testing.assert_array_equal(out.numpy(), np.zeros((3, 4), dtype=np.float32))


def test_mlp_plug_through_construction():
    # first linear [I | 0], second I, zero biases; GELU(x) ~ x for large x > 0
    d = 4
    cfg = cfg_for(MLP, dim=d)
    params = init_interaction_params(cfg, seed=0)
    w1 = np.zeros((2 * d, d), dtype=np.float32)
    w1[:d] = np.eye(d, dtype=np.float32)
    params["mlp.w1"].data = w1
    params["mlp.b1"].data = np.zeros(d, dtype=np.float32)
    params["mlp.w2"].data = np.eye(d, dtype=np.float32)
    params["mlp.b2"].data = np.zeros(d, dtype=np.float32)
    frames = np.full((2, d), 15.0, dtype=np.float32)
    out = interact_mlp(t32(frames), t32(rand((3, d), seed=7)), params)
    np.testing.assert_allclose(out.numpy(), frames, rtol=1e-5)


def test_mlp_caption_permutation_invariant():
    cfg = cfg_for(MLP, dim=4)
    params = init_interaction_params(cfg, seed=1)
    frames, caps = rand((3, 4), seed=8), rand((4, 4), seed=9)
    a = interact_mlp(t32(frames), t32(caps), params).numpy()
    b = interact_mlp(t32(frames), t32(caps[::-1].copy()), params).numpy()
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_mlp_gradcheck():
    cfg = cfg_for(MLP, dim=4)
    params = init_interaction_params(cfg, seed=2, dtype=np.float64)
    frames = T.tensor(rand((2, 4), seed=10, dtype=np.float64), dtype=np.float64)
    caps = T.tensor(rand((3, 4), seed=11, dtype=np.float64), dtype=np.float64)
    r = T.tensor(rand((2, 4), seed=12, dtype=np.float64), dtype=np.float64)

    def build():
        return T.sum_all(T.mul(interact_mlp(frames, caps, params), r))

    with T.GradTape() as tape:
        loss = build()
    grads = T.backward(loss, tape)
    for p in params.values():
        fd = finite_difference_grad(lambda: build().item(), p, order=4)
        assert max_rel_error(grads[p], fd) < 1e-6


# --- cross transformer ------------------------------------------------------------

def test_cross_zero_init_identity():
    cfg = cfg_for(CROSS, dim=8, layers=3)
    params = init_interaction_params(cfg, seed=3)
    frames, caps = rand((4, 8), seed=13), rand((3, 8), seed=14)
    out = interact_cross(t32(frames), t32(caps), params, cfg)
    np.testing.assert_array_equal(out.numpy(), frames)


def test_cross_caption_permutation_at_zero_init():
    cfg = cfg_for(CROSS, dim=8)
    params = init_interaction_params(cfg, seed=4)
    frames, caps = rand((4, 8), seed=15), rand((3, 8), seed=16)
    a = interact_cross(t32(frames), t32(caps), params, cfg).numpy()
    b = interact_cross(t32(frames), t32(caps[::-1].copy()), params, cfg).numpy()
    np.testing.assert_array_equal(a, b)


def _reference_cross_block(seq, p, heads):
    """Straight-line numpy evaluation of one pre-norm encoder block."""
    def ln(x, g, b):
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        return (x - mu) / np.sqrt(var + 1e-5) * g + b

    def gelu(x):
        c = np.sqrt(2.0 / np.pi)
        return 0.5 * x * (1 + np.tanh(c * (x + 0.044715 * x ** 3)))

    g = lambda name: p[f"cross.blk0.{name}"].data
    h = ln(seq, g("ln1.gain"), g("ln1.bias"))
    q, k, v = h @ g("attn.wq") + g("attn.bq"), h @ g("attn.wk") + g("attn.bk"), \
        h @ g("attn.wv") + g("attn.bv")
    d = seq.shape[1]
    dh = d // heads
    heads_out = []
    for i in range(heads):
        qs, ks, vs = (m[:, i * dh:(i + 1) * dh] for m in (q, k, v))
        scores = qs @ ks.T / np.sqrt(dh)
        scores = scores - scores.max(axis=1, keepdims=True)
        attn = np.exp(scores)
        attn = attn / attn.sum(axis=1, keepdims=True)
        heads_out.append(attn @ vs)
    x = seq + np.concatenate(heads_out, axis=1) @ g("attn.wo") + g("attn.bo")
    h2 = ln(x, g("ln2.gain"), g("ln2.bias"))
    return x + gelu(h2 @ g("ffn.w1") + g("ffn.b1")) @ g("ffn.w2") + g("ffn.b2")


def test_cross_matches_straight_line_reference():
    cfg = cfg_for(CROSS, dim=8, layers=1, heads=2)
    params = init_interaction_params(cfg, seed=5, dtype=np.float64)
    rng = np.random.default_rng(17)
    for p in params.values():  # move away from the zero-init identity
        p.data = p.data + 0.3 * rng.standard_normal(p.data.shape)
    frames = rng.standard_normal((2, 8))
    caps = rng.standard_normal((3, 8))
    got = interact_cross(T.tensor(frames, dtype=np.float64),
                         T.tensor(caps, dtype=np.float64), params, cfg).numpy()
    te = params["cross.type_emb"].data
    seq = np.concatenate([frames + te[0], caps + te[1]], axis=0)
    expect = _reference_cross_block(seq, params, heads=2)[:2]
    np.testing.assert_allclose(got, expect, atol=1e-5)


def test_cross_sequence_too_long():
    cfg = cfg_for(CROSS, dim=8, max_frames=3)
    params = init_interaction_params(cfg, seed=6)
    with pytest.raises(SequenceTooLong):
        interact_cross(t32(rand((4, 8))), t32(rand((2, 8))), params, cfg)


# --- co-attention -----------------------------------------------------------------

def test_coattn_zero_init_identity():
    cfg = cfg_for(COATTN, dim=8, layers=2)
    params = init_interaction_params(cfg, seed=7)
    frames, caps = rand((4, 8), seed=18), rand((3, 8), seed=19)
    out = interact_coattn(t32(frames), t32(caps), params, cfg)
    np.testing.assert_array_equal(out.numpy(), frames)


def test_coattn_frame_permutation_at_zero_init():
    cfg = cfg_for(COATTN, dim=8)
    params = init_interaction_params(cfg, seed=8)
    frames, caps = rand((5, 8), seed=20), rand((3, 8), seed=21)
    perm = np.random.default_rng(22).permutation(5)
    a = interact_coattn(t32(frames[perm]), t32(caps), params, cfg).numpy()
    b = interact_coattn(t32(frames), t32(caps), params, cfg).numpy()[perm]
    np.testing.assert_array_equal(a, b)


def test_coattn_no_captions():
    cfg = cfg_for(COATTN, dim=8)
    params = init_interaction_params(cfg, seed=9)
    with pytest.raises(NoCaptions):
        interact_coattn(t32(rand((2, 8))), t32(np.zeros((0, 8))), params, cfg)


# --- dispatch / shape contract ------------------------------------------------------

@pytest.mark.parametrize("strategy", [NONE, SUM, MLP, CROSS, COATTN])
@pytest.mark.parametrize("f,c", [(1, 1), (3, 2), (5, 7)])
def test_shape_contract(strategy, f, c):
    cfg = cfg_for(strategy, dim=8)
    params = init_interaction_params(cfg, seed=10)
    out = enhance(t32(rand((f, 8), seed=f)), t32(rand((c, 8), seed=c)),
                  params, cfg)
    assert out.shape == (f, 8)


def test_config_validation():
    with pytest.raises(InvalidConfig):
        cfg_for("wat").validate()
    with pytest.raises(InvalidConfig):
        InteractionConfig(strategy=CROSS, dim=8, heads=3).validate()
    with pytest.raises(InvalidConfig):
        InteractionConfig(strategy=COATTN, dim=8, heads=2, layers=0).validate()


def test_zero_init_params_zeroed_where_required():
    cfg = cfg_for(COATTN, dim=8, layers=1)
    params = init_interaction_params(cfg, seed=11)
    for name, p in params.items():
        if name.endswith((".wo", ".bo", ".w2", ".b2")) or \
                name.endswith(("pos_emb", "type_emb")):
            assert not p.data.any(), name
