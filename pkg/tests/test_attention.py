import numpy as np
import numpy.testing as npt
import pytest

from tumorfuse.attention import (AttentionParams, EncoderBlock, MultiHeadSelfAttention, ViTClassifier, ViTConfig,
                                 feature_tokens, patchify, unpatchify)
from tumorfuse.backbones import BackboneConfig
from tumorfuse.errors import ContractError, DimensionError
from tumorfuse.tensor import Tensor


def f64(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


class TestTokens:
    def test_patchify_raster_order(self):
        img = f64(np.arange(16).reshape(1, 4, 4))
        tokens = patchify(img, 2).data
        assert tokens.shape == (4, 4)
        npt.assert_array_equal(tokens[0], [0, 1, 4, 5])
        npt.assert_array_equal(tokens[1], [2, 3, 6, 7])
        npt.assert_array_equal(tokens[3], [10, 11, 14, 15])

    def test_patchify_round_trip(self):
        img = f64(np.random.default_rng(0).standard_normal((2, 3, 8, 12)))
        back = unpatchify(patchify(img, 4), 4, 3, 8, 12)
        npt.assert_array_equal(back.data, img.data)

    def test_patch_size_must_divide(self):
        with pytest.raises(DimensionError):
            patchify(f64(np.zeros((1, 6, 6))), 4)

    def test_feature_tokens_one_per_site(self):
        feats = f64(np.arange(24).reshape(1, 3, 2, 4))
        tokens = feature_tokens(feats).data
        assert tokens.shape == (1, 8, 3)
        npt.assert_array_equal(tokens[0, 5], feats.data[0, :, 1, 1])


class TestAttention:
    def test_heads_must_divide_width(self):
        with pytest.raises(ContractError):
            AttentionParams(heads=3, d_model=8)

    def test_rows_are_distributions(self):
        layer = MultiHeadSelfAttention(AttentionParams(4, 8), np.random.default_rng(0))
        layer.astype(np.float64)
        layer(f64(np.random.default_rng(1).standard_normal((3, 5, 8))))
        assert layer.last_scores.shape == (3, 4, 5, 5)
        npt.assert_allclose(layer.last_scores.sum(axis=-1), 1.0, atol=1e-12)

    def test_single_head_matches_hand_computation(self):
        rng = np.random.default_rng(2)
        layer = MultiHeadSelfAttention(AttentionParams(1, 3), rng)
        layer.astype(np.float64)
        x = rng.standard_normal((4, 3))
        wq, wk, wv, wo = (m.weight.data for m in (layer.w_q, layer.w_k, layer.w_v, layer.w_o))
        q, k, v = x @ wq.T, x @ wk.T, x @ wv.T
        s = q @ k.T / np.sqrt(3)
        a = np.exp(s - s.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        npt.assert_allclose(layer(f64(x)).data, (a @ v) @ wo.T, rtol=1e-10)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        block = EncoderBlock(AttentionParams(2, 4), rng)
        block.astype(np.float64)
        x = rng.standard_normal((1, 6, 4))
        perm = rng.permutation(6)
        npt.assert_allclose(block(f64(x[:, perm])).data, block(f64(x)).data[:, perm], atol=1e-12)

    def test_width_mismatch(self):
        layer = MultiHeadSelfAttention(AttentionParams(2, 4), np.random.default_rng(0))
        with pytest.raises(DimensionError):
            layer(f64(np.zeros((3, 5))))


class TestViT:
    @pytest.mark.parametrize("source", ["features", "patches"])
    def test_outputs_probabilities(self, source):
        model = ViTClassifier(BackboneConfig(), ViTConfig(token_source=source))
        probs = model(Tensor(np.random.default_rng(0).uniform(size=(3, 1, 64, 64)).astype(np.float32))).data
        assert probs.shape == (3, 2)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_bad_token_source(self):
        with pytest.raises(ContractError):
            ViTConfig(token_source="pixels")
