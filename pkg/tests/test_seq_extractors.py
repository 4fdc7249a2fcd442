import math

import numpy as np
import pytest

from qorpred.config import ModelConfig
from qorpred.errors import ShapeError
from qorpred.seq_extractors import (
    CnnExtractor,
    LstmExtractor,
    TransformerBlock,
    TransformerExtractor,
    attention_scores,
    attention_weights,
    conv1d,
    lstm_cell,
    make_seq_extractor,
    multi_head,
    self_attention_head,
)
from qorpred.tensor import Tensor, layer_norm


def np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def head_oracle(x, wq, wk, wv):
    q, k, v = x @ wq, x @ wk, x @ wv
    out = np.zeros((x.shape[0], wv.shape[1]))
    for i in range(x.shape[0]):
        scores = np.array([q[i] @ k[j] / math.sqrt(k.shape[1]) for j in range(x.shape[0])])
        alpha = np.exp(scores - scores.max())
        alpha /= alpha.sum()
        out[i] = sum(alpha[j] * v[j] for j in range(x.shape[0]))
    return out


def np_sigmoid(x):
    return 1 / (1 + np.exp(-x))


# attention

def test_attention_score_hand_value():
    s = attention_scores(Tensor([1.0, 0.0]), Tensor([[1.0, 0.0]])).data
    np.testing.assert_allclose(s, [1 / math.sqrt(2)], atol=1e-15)
    np.testing.assert_allclose(s, [0.70711], atol=1e-5)


def test_attention_orthogonal_query():
    s = attention_scores(Tensor([0.0, 1.0]), Tensor([[1.0, 0.0], [2.0, 0.0], [-3.0, 0.0]])).data
    np.testing.assert_array_equal(s, [0.0, 0.0, 0.0])


def test_attention_scores_dot_oracle(rng):
    q, keys = rng.normal(size=3), rng.normal(size=(5, 3))
    np.testing.assert_allclose(attention_scores(Tensor(q), Tensor(keys)).data,
                               keys @ q / math.sqrt(3), atol=1e-12)


def test_attention_rows_sum_to_one(rng):
    w = attention_weights(Tensor(rng.normal(size=(20, 4))), Tensor(rng.normal(size=(4, 2))),
                          Tensor(rng.normal(size=(4, 2)))).data
    assert np.abs(w.sum(axis=-1) - 1).max() < 1e-9


def test_head_identical_rows(rng):
    x = np.tile(rng.normal(size=4), (6, 1))
    out = self_attention_head(Tensor(x), *(Tensor(rng.normal(size=(4, 2))) for _ in range(3))).data
    np.testing.assert_allclose(out, np.tile(out[0], (6, 1)), atol=1e-15)


def test_head_single_position(rng):
    x, wv = rng.normal(size=(1, 4)), rng.normal(size=(4, 2))
    out = self_attention_head(Tensor(x), Tensor(rng.normal(size=(4, 2))),
                              Tensor(rng.normal(size=(4, 2))), Tensor(wv)).data
    np.testing.assert_allclose(out, x @ wv, atol=1e-15)


def test_head_matches_oracle(rng):
    x = rng.normal(size=(3, 4))
    ws = [rng.normal(size=(4, 2)) for _ in range(3)]
    out = self_attention_head(Tensor(x), *map(Tensor, ws)).data
    np.testing.assert_allclose(out, head_oracle(x, *ws), atol=1e-12)


def test_multi_head_concatenation(rng):
    x = rng.normal(size=(20, 4))
    wq = [rng.normal(size=(4, 2)), np.zeros((4, 2))]
    wk = [rng.normal(size=(4, 2)), np.zeros((4, 2))]
    wv = [rng.normal(size=(4, 2)), np.zeros((4, 2))]
    z = multi_head(Tensor(x), [Tensor(w) for w in wq], [Tensor(w) for w in wk],
                   [Tensor(w) for w in wv], Tensor(np.eye(4))).data
    assert z.shape == (20, 4)
    np.testing.assert_allclose(z[:, :2], head_oracle(x, wq[0], wk[0], wv[0]), atol=1e-12)
    np.testing.assert_array_equal(z[:, 2:], 0.0)


def test_multi_head_oracle(rng):
    x = rng.normal(size=(20, 4))
    ws = [[rng.normal(size=(4, 2)) for _ in range(2)] for _ in range(3)]
    wo = rng.normal(size=(4, 4))
    z = multi_head(Tensor(x), *([Tensor(w) for w in group] for group in ws), Tensor(wo)).data
    heads = [head_oracle(x, ws[0][h], ws[1][h], ws[2][h]) for h in range(2)]
    np.testing.assert_allclose(z, np.concatenate(heads, axis=1) @ wo, atol=1e-12)


# transformer

def zero_block(block):
    for p in block.parameters():
        if p is not block.ln1_gain and p is not block.ln2_gain:
            p.data[...] = 0.0


def test_block_zero_weights_is_double_layer_norm(rng):
    block = TransformerBlock(rng, 4, 2, 32)
    zero_block(block)
    x = rng.normal(size=(20, 4))
    expected = layer_norm(layer_norm(Tensor(x))).data
    np.testing.assert_allclose(block(Tensor(x)).data, expected, atol=1e-12)


def test_block_deterministic(rng):
    block = TransformerBlock(rng, 4, 2, 32)
    x = Tensor(rng.normal(size=(20, 4)))
    np.testing.assert_array_equal(block(x).data, block(x).data)


def test_transformer_width_and_position_sensitivity():
    cfg = ModelConfig()
    ext = TransformerExtractor(np.random.default_rng(0), cfg)
    seq = np.arange(20) % 7
    out = ext(seq).data
    assert out.shape == (1, 50)
    swapped = seq.copy()
    swapped[[0, 1]] = swapped[[1, 0]]
    assert np.abs(ext(swapped).data - out).max() > 1e-6


def test_transformer_block_count():
    ext = TransformerExtractor(np.random.default_rng(0), ModelConfig())
    assert len(ext.blocks) == 3 and ext.readout.weight.shape == (80, 50)


def test_extractor_rejects_wrong_length():
    ext = TransformerExtractor(np.random.default_rng(0), ModelConfig())
    with pytest.raises(ShapeError):
        ext(np.zeros(19, dtype=int))


# lstm

def test_lstm_cell_oracle(rng):
    x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    w_ih, w_hh, b = rng.normal(size=(3, 20)), rng.normal(size=(5, 20)), rng.normal(size=20)
    h1, c1 = lstm_cell(Tensor(x), Tensor(h), Tensor(c), Tensor(w_ih), Tensor(w_hh), Tensor(b))
    z = x @ w_ih + h @ w_hh + b
    i, f, g, o = np_sigmoid(z[:, :5]), np_sigmoid(z[:, 5:10]), np.tanh(z[:, 10:15]), np_sigmoid(z[:, 15:])
    c_ref = f * c + i * g
    np.testing.assert_allclose(c1.data, c_ref, atol=1e-12)
    np.testing.assert_allclose(h1.data, o * np.tanh(c_ref), atol=1e-12)


def test_lstm_zero_weights_give_zero_output():
    ext = LstmExtractor(np.random.default_rng(0), ModelConfig(seq_extractor="lstm"))
    for layer in ext.layers:
        for p in layer.parameters():
            p.data[...] = 0.0
    out = ext(np.arange(20) % 7).data
    assert out.shape == (1, 64)
    np.testing.assert_array_equal(out, 0.0)


def test_lstm_layers():
    ext = LstmExtractor(np.random.default_rng(0), ModelConfig(seq_extractor="lstm"))
    assert len(ext.layers) == 2
    assert ext.layers[0].w_ih.shape == (3, 256) and ext.layers[1].w_ih.shape == (64, 256)


# cnn

def test_cnn_width_decomposition():
    cfg = ModelConfig(seq_extractor="cnn")
    assert cfg.cnn_windows == [14, 13, 12, 11]
    ext = CnnExtractor(np.random.default_rng(0), cfg)
    assert ext(np.zeros((3, 20), dtype=int)).shape == (3, 50)


def test_conv_all_ones():
    out = conv1d(Tensor(np.ones((1, 60))), Tensor(np.ones(21)), None, 3).data
    assert out.shape == (1, 14)
    np.testing.assert_array_equal(out, 21.0)


def test_conv_sliding_window_oracle(rng):
    x, k = rng.normal(size=(2, 60)), rng.normal(size=24)
    out = conv1d(Tensor(x), Tensor(k), Tensor([0.5]), 3).data
    ref = np.array([[x[b, s:s + 24] @ k + 0.5 for s in range(0, 60 - 24 + 1, 3)] for b in range(2)])
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("kind, width", [("transformer", 50), ("lstm", 64), ("cnn", 50)])
def test_feature_widths(kind, width):
    cfg = ModelConfig(seq_extractor=kind)
    ext = make_seq_extractor(np.random.default_rng(0), cfg)
    assert ext.width == cfg.seq_width == width
    assert ext(np.zeros((2, 20), dtype=int)).shape == (2, width)


def test_batched_equals_single():
    cfg = ModelConfig(seq_extractor="lstm")
    ext = make_seq_extractor(np.random.default_rng(2), cfg)
    seqs = np.random.default_rng(3).integers(0, 7, size=(4, 20))
    batched = ext(seqs).data
    for b in range(4):
        np.testing.assert_allclose(ext(seqs[b]).data[0], batched[b], atol=1e-12)
