import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from headclip.config import ModelConfig
from headclip.diffcore import Tensor, layer_norm, quick_gelu
from headclip.model import HeadCLIPState
from headclip.vision import (
    HEAD_WEIGHTS,
    csa_head,
    encode_dual_path,
    local_features,
    frozen_prefix,
    mhcsa_block,
    mhsa_block,
    patch_embed,
    project,
)

CFG = ModelConfig()


def test_patch_embed_shape(p):
    assert patch_embed(np.zeros((32, 32, 3)), p, CFG).shape == (1, 65, 32)


def test_zero_image_and_projection_gives_positions(p):
    p = dict(p)
    p["vision.patch_proj"] = Tensor(np.zeros_like(p["vision.patch_proj"].data))
    tokens = patch_embed(np.zeros((32, 32, 3)), p, CFG).data[0]
    np.testing.assert_array_equal(tokens[1:], p["vision.pos"].data[1:])
    np.testing.assert_array_equal(tokens[0], p["vision.cls"].data + p["vision.pos"].data[0])


def test_patch_locality(p):
    a = np.random.default_rng(1).uniform(size=(32, 32, 3))
    b = a.copy()
    b[8:12, 4:8] += 0.3  # grid row 2, column 1 -> patch index 2*8 + 1
    diff = np.abs(patch_embed(a, p, CFG).data[0] - patch_embed(b, p, CFG).data[0]).max(axis=-1)
    assert np.flatnonzero(diff).tolist() == [1 + 17]


def test_wrong_image_size(p):
    with pytest.raises(ValueError, match="expected 32x32, got 16x16"):
        patch_embed(np.zeros((16, 16, 3)), p, CFG)


def test_single_token_block_is_value_path_plus_mlp(p):
    x = np.random.default_rng(2).normal(size=(1, 32))
    pre = "vision.layer0"
    y = layer_norm(x, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"]).data
    v = y @ p[f"{pre}.attn.wv"].data + p[f"{pre}.attn.bv"].data
    z = x + v @ p[f"{pre}.attn.wo"].data + p[f"{pre}.attn.bo"].data
    u = layer_norm(z, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"]).data
    u = quick_gelu(u @ p[f"{pre}.mlp.w1"].data + p[f"{pre}.mlp.b1"].data).data
    expected = z + u @ p[f"{pre}.mlp.w2"].data + p[f"{pre}.mlp.b2"].data
    np.testing.assert_allclose(mhsa_block(x, p, pre, 4).data, expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mhsa_permutation_equivariance(seed):
    p = HeadCLIPState.initialize(CFG).tensors(track=False)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(9, 32))
    perm = rng.permutation(9)
    out = mhsa_block(x, p, "vision.layer1", 4).data
    np.testing.assert_allclose(mhsa_block(x[perm], p, "vision.layer1", 4).data, out[perm], atol=1e-12)


def test_block_shape(p):
    assert mhsa_block(np.zeros((65, 32)), p, "vision.layer0", 4).shape == (65, 32)


def test_csa_single_token_is_identity():
    v = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(csa_head(v).data, v, rtol=0, atol=0)


def test_csa_zero_values():
    np.testing.assert_array_equal(csa_head(np.zeros((5, 4))).data, np.zeros((5, 4)))


def test_csa_two_token_oracle():
    # row 0 logits (1/sqrt 2, 0): weights e^a/(e^a+1) and 1/(e^a+1)
    a = 1.0 / np.sqrt(2.0)
    w0 = np.exp(a) / (np.exp(a) + 1.0)
    out = csa_head(np.eye(2)).data
    np.testing.assert_allclose(out[0], [w0, 1.0 - w0], atol=1e-15)
    assert abs(out[0, 0] - 0.6698) < 1e-4


def test_mhcsa_unit_weights_match_unweighted(p):
    x = np.random.default_rng(3).normal(size=(2, 65, 32))
    a = mhcsa_block(x, p, "vision.layer1", np.ones(4), 4).data
    b = mhcsa_block(x, p, "vision.layer1", None, 4).data
    assert a.tobytes() == b.tobytes()


def test_mhcsa_zero_weights_is_residual(p):
    p = dict(p)
    p["vision.layer1.attn.bo"] = Tensor(np.zeros(32))
    x = np.random.default_rng(4).normal(size=(2, 65, 32))
    assert mhcsa_block(x, p, "vision.layer1", np.zeros(4), 4).data.tobytes() == x.tobytes()


def test_mhcsa_linear_in_weights(p):
    x = np.random.default_rng(5).normal(size=(1, 65, 32))
    e1 = np.array([1.0, 0, 0, 0])
    f = lambda w: mhcsa_block(x, p, "vision.layer2", w, 4).data
    np.testing.assert_allclose(f(2 * e1) - f(0 * e1), 2 * (f(e1) - f(0 * e1)), atol=1e-10)


def test_mhcsa_rejects_wrong_weight_count(p):
    with pytest.raises(ValueError):
        mhcsa_block(np.zeros((1, 65, 32)), p, "vision.layer1", np.ones(3), 4)


def test_dual_path_shapes(p):
    feats = encode_dual_path(np.zeros((32, 32, 3)), p, CFG)
    assert feats.f_global.shape == (1, 32)
    assert {k: v.shape for k, v in feats.f_local.items()} == {1: (1, 64, 32), 3: (1, 64, 32)}


def test_csa_free_config_matches_global_patch_features(images):
    cfg = CFG.replace(csa_layer_range=None)
    p = HeadCLIPState.initialize(cfg).tensors(track=False)
    feats = encode_dual_path(images, p, cfg)
    x = patch_embed(images, p, cfg)
    for layer in range(cfg.num_layers):
        x = mhsa_block(x, p, f"vision.layer{layer}", 4)
        if layer in cfg.feature_layers:
            assert feats.f_local[layer].data.tobytes() == project(x[:, 1:, :], p).data.tobytes()


def test_local_path_uses_head_weights(p, images):
    prefix = frozen_prefix(images, p, CFG)
    base = local_features(prefix, p, CFG)[3].data
    q = dict(p)
    q[HEAD_WEIGHTS] = Tensor(p[HEAD_WEIGHTS].data * 1.5)
    assert not np.array_equal(base, local_features(prefix, q, CFG)[3].data)
    assert frozen_prefix(images, q, CFG).f_global.data.tobytes() == prefix.f_global.data.tobytes()


def test_feature_layer_before_csa_range(images):
    cfg = CFG.replace(csa_layer_range=(2, 3), feature_layers=(0, 3))
    p = HeadCLIPState.initialize(cfg).tensors(track=False)
    feats = encode_dual_path(images, p, cfg)
    x = mhsa_block(patch_embed(images, p, cfg), p, "vision.layer0", 4)
    np.testing.assert_array_equal(feats.f_local[0].data, project(x[:, 1:, :], p).data)


def test_distinct_images_distinct_global_features(p):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(size=(2, 32, 32, 3))
        fa = encode_dual_path(a, p, CFG).f_global.data
        fb = encode_dual_path(b, p, CFG).f_global.data
        assert not np.array_equal(fa, fb)


def test_missing_parameter_is_named(p):
    p = dict(p)
    del p["vision.layer0.attn.wq"]
    with pytest.raises(KeyError, match="vision.layer0.attn.wq"):
        encode_dual_path(np.zeros((32, 32, 3)), p, CFG)
