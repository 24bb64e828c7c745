import numpy as np
import pytest
from dataclasses import replace
from numpy.testing import assert_allclose, assert_array_equal

from mesv.encoder import (EncoderConfig, attentive_stats_pool, class_scores, context_splice,
                          encode, init_encoder, mixup_features, se_block, stats_pool, tdnn_layer)
from mesv.errors import ConfigError, ContractError, LengthError
from mesv.numkernel.tensor import Tensor
from mesv.objectives.losses import softmax_ce
from mesv.pipeline.gradcheck import grad_check


def test_splice_identity():
    x = np.arange(12.0).reshape(3, 4)
    assert_array_equal(context_splice(x, (0,)).data, x)


def test_splice_lengths_and_layout():
    x = np.arange(10.0)[None, :]
    assert context_splice(x, (-2, -1, 0, 1, 2)).shape == (5, 6)
    x = np.stack([np.arange(15.0), 100 + np.arange(15.0)])
    out = context_splice(x, (-3, 0, 3)).data
    assert out.shape == (6, 9)
    # offset-major blocks of the two channels: frames 0, 3, 6
    assert_array_equal(out[:, 0], [0.0, 100.0, 3.0, 103.0, 6.0, 106.0])


def test_splice_too_short():
    with pytest.raises(LengthError):
        context_splice(np.zeros((2, 6)), (-3, 0, 3))


def test_tdnn_zero_and_identity(rng):
    x = rng.normal(size=(4, 8))
    out = tdnn_layer(x, (-1, 0, 1), Tensor(np.zeros((12, 5))), Tensor(np.zeros(5)))
    assert_array_equal(out.data, 0.0)
    out = tdnn_layer(x, (0,), Tensor(np.eye(4)), Tensor(np.zeros(4)))
    assert_array_equal(out.data, np.maximum(x, 0.0))


def test_stats_pool_examples(rng):
    c = rng.normal(size=3)
    assert_allclose(stats_pool(np.tile(c[:, None], (1, 5))).data, np.r_[c, 0, 0, 0], atol=1e-15)
    m = rng.normal(size=(3, 1))
    assert_array_equal(stats_pool(m).data, np.r_[m[:, 0], 0, 0, 0])


def test_asp_zero_v_equals_stats_pool(rng):
    m = rng.normal(size=(6, 11))
    w, b = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=4))
    out = attentive_stats_pool(m, w, b, Tensor(np.zeros(4)), Tensor(3.7))
    assert np.max(np.abs(out.data - stats_pool(m).data)) <= 1e-12


def test_asp_single_frame(rng):
    m = rng.normal(size=(6, 1))
    out = attentive_stats_pool(m, Tensor(rng.normal(size=(6, 4))), Tensor(np.zeros(4)),
                               Tensor(rng.normal(size=4)), Tensor(0.0))
    assert_allclose(out.data, np.r_[m[:, 0], np.zeros(6)], atol=1e-15)


def test_se_zero_weights_halves(rng):
    m = rng.normal(size=(8, 5))
    out = se_block(m, Tensor(np.zeros((8, 2))), Tensor(rng.normal(size=2)),
                   Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
    assert_allclose(out.data, 0.5 * m, atol=0)


def test_total_context_of_default_config():
    cfg = EncoderConfig()
    assert cfg.total_context == 11
    params = init_encoder(cfg, np.random.default_rng(0))
    from mesv.encoder import frame_features
    h = frame_features(np.zeros((23, 40)), cfg, params)
    assert h.shape == (64, 40 - (cfg.total_context - 1))


def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(pooling="max")
    with pytest.raises(ConfigError):
        EncoderConfig(layers=(((0, -1), 8),))
    with pytest.raises(ConfigError):
        EncoderConfig(use_se=True, se_ratio=3)


def test_encode_rejects_short_and_wrong_channels(micro_encoder):
    params = init_encoder(micro_encoder, np.random.default_rng(0))
    with pytest.raises(LengthError):
        encode(np.zeros((5, micro_encoder.total_context - 1)), micro_encoder, params)
    with pytest.raises(ContractError):
        encode(np.zeros((4, 20)), micro_encoder, params)


@pytest.mark.parametrize("pooling,use_se", [("sp", False), ("asp", True)])
def test_encode_deterministic_and_batch_covariant(micro_encoder, pooling, use_se):
    cfg = replace(micro_encoder, pooling=pooling, use_se=use_se, se_ratio=2)
    params = init_encoder(cfg, np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(5, 5, 17))
    single = np.stack([encode(xi, cfg, params).data for xi in x])
    assert_array_equal(encode(x[0].copy(), cfg, params).data, single[0])
    batched = encode(x, cfg, params).data
    assert_allclose(batched, single, atol=1e-13)
    perm = [3, 0, 4, 1, 2]
    assert_allclose(encode(x[perm], cfg, params).data, single[perm], atol=1e-13)


def test_mixup_features_examples(rng):
    x1, x2 = rng.normal(size=(4, 9)), rng.normal(size=(4, 12))
    mixed, (y1, y2, beta) = mixup_features(x1, 1, x2, 2, 1.0)
    assert_array_equal(mixed, x1)
    assert (y1, y2, beta) == (1, 2, 1.0)
    mixed, _ = mixup_features(x1, 1, x2, 2, 0.0)
    assert_array_equal(mixed, x2[:, :9])
    mixed, _ = mixup_features(x1, 1, x2, 2, 0.5)
    assert_allclose(mixed, 0.5 * (x1 + x2[:, :9]), atol=1e-15)
    with pytest.raises(ContractError):
        mixup_features(x1, 1, x2, 2, 1.5)


@pytest.mark.parametrize("pooling,use_se,loss", [("sp", False, "softmax"), ("asp", True, "softmax"),
                                                  ("sp", False, "am-softmax")])
def test_classification_gradient(micro_encoder, pooling, use_se, loss):
    cfg = replace(micro_encoder, pooling=pooling, use_se=use_se, se_ratio=2)
    rng = np.random.default_rng(11)
    params = init_encoder(cfg, rng)
    x = rng.normal(size=(3, 5, 14))
    y = np.array([0, 2, 1])

    def closure():
        return softmax_ce(class_scores(encode(x, cfg, params), cfg, params, loss), y)

    report = grad_check(closure, params, tolerance=1e-4)
    assert report.ok, str(report)
