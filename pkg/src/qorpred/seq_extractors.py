"""Sequence feature extractors: Transformer encoder, stacked LSTM, 1-D CNN.

Each extractor maps integer token ids of shape (B, L) to a (B, width)
feature matrix. A single sequence of shape (L,) is treated as B = 1.
"""

import math

import numpy as np

from .errors import ShapeError
from .nn import Linear, Module, uniform_init
from .sequence import EmbeddingTable
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    layer_norm,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    tanh,
    transpose,
)


def _batched_ids(seq, seq_len):
    ids = np.asarray(seq)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] != seq_len:
        raise ShapeError(f"expected sequences of length {seq_len}, got shape {np.shape(seq)}")
    return ids


# --------------------------------------------------------------------------
# attention

def attention_scores(q, keys):
    """Scaled dot products ``q . k_i / sqrt(d)`` for every key row."""
    q, keys = as_tensor(q), as_tensor(keys)
    if q.shape[-1] != keys.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} does not match key width {keys.shape[-1]}")
    d = keys.shape[-1]
    scores = matmul(keys, reshape(q, q.shape + (1,)))
    return reshape(scores, scores.shape[:-1]) * (1.0 / math.sqrt(d))


def attention_weights(x, wq, wk):
    q = matmul(x, wq)
    k = matmul(x, wk)
    d = wk.shape[-1]
    return softmax(matmul(q, transpose(k, _swap_last(k.ndim))) * (1.0 / math.sqrt(d)), axis=-1)


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def self_attention_head(x, wq, wk, wv):
    """softmax(Q K^T / sqrt(d_head)) V for one head; x is (L, d) or (B, L, d)."""
    x = as_tensor(x)
    if x.shape[-1] != wq.shape[0]:
        raise ShapeError(f"input width {x.shape[-1]} does not match W_Q rows {wq.shape[0]}")
    return matmul(attention_weights(x, wq, wk), matmul(x, wv))


class MultiHeadAttention(Module):
    def __init__(self, rng, d_model, heads):
        d_head = d_model // heads
        self.wq = [uniform_init(rng, (d_model, d_head), d_model) for _ in range(heads)]
        self.wk = [uniform_init(rng, (d_model, d_head), d_model) for _ in range(heads)]
        self.wv = [uniform_init(rng, (d_model, d_head), d_model) for _ in range(heads)]
        self.wo = uniform_init(rng, (d_model, d_model), d_model)

    def __call__(self, x):
        return multi_head(x, self.wq, self.wk, self.wv, self.wo)


def multi_head(x, wq, wk, wv, wo):
    """Concatenate per-head outputs and project with ``wo``."""
    heads = [self_attention_head(x, q, k, v) for q, k, v in zip(wq, wk, wv)]
    return matmul(concat(heads, axis=-1), wo)


class TransformerBlock(Module):
    """Post-norm encoder block: LN(x + MHA(x)), then LN(h + FF(h))."""

    def __init__(self, rng, d_model, heads, ff_width):
        self.attn = MultiHeadAttention(rng, d_model, heads)
        self.ln1_gain = Tensor(np.ones(d_model), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(d_model), requires_grad=True)
        self.ff1 = Linear(rng, d_model, ff_width)
        self.ff2 = Linear(rng, ff_width, d_model)
        self.ln2_gain = Tensor(np.ones(d_model), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(d_model), requires_grad=True)

    def __call__(self, x):
        h = layer_norm(x + self.attn(x), self.ln1_gain, self.ln1_bias)
        return layer_norm(h + self.ff2(relu(self.ff1(h))), self.ln2_gain, self.ln2_bias)


class TransformerExtractor(Module):
    def __init__(self, rng, cfg):
        self.seq_len = cfg.seq_len
        self.embedding = EmbeddingTable(rng, cfg.d_model, seq_len=cfg.seq_len)
        self.blocks = [TransformerBlock(rng, cfg.d_model, cfg.heads, cfg.ff_width)
                       for _ in range(cfg.blocks)]
        self.readout = Linear(rng, cfg.seq_len * cfg.d_model, cfg.seq_out)
        self.width = cfg.seq_out

    def __call__(self, seq):
        ids = _batched_ids(seq, self.seq_len)
        x = self.embedding(ids)
        for block in self.blocks:
            x = block(x)
        return self.readout(reshape(x, (ids.shape[0], -1)))


# --------------------------------------------------------------------------
# LSTM

def lstm_cell(x, h, c, w_ih, w_hh, bias):
    """One LSTM step with gate columns ordered (input, forget, candidate, output)."""
    z = matmul(x, w_ih) + matmul(h, w_hh) + bias
    n = h.shape[-1]
    i = sigmoid(z[:, 0:n])
    f = sigmoid(z[:, n:2 * n])
    g = tanh(z[:, 2 * n:3 * n])
    o = sigmoid(z[:, 3 * n:4 * n])
    c_next = f * c + i * g
    return o * tanh(c_next), c_next


class LstmLayer(Module):
    def __init__(self, rng, d_in, hidden):
        self.w_ih = uniform_init(rng, (d_in, 4 * hidden), d_in)
        self.w_hh = uniform_init(rng, (hidden, 4 * hidden), hidden)
        self.bias = uniform_init(rng, (4 * hidden,), hidden)
        self.hidden = hidden


class LstmExtractor(Module):
    """Stacked unidirectional LSTM; returns the top layer's last hidden state."""

    def __init__(self, rng, cfg):
        self.seq_len = cfg.seq_len
        self.embedding = EmbeddingTable(rng, cfg.token_dim)
        dims = [cfg.token_dim] + [cfg.lstm_hidden] * (cfg.lstm_layers - 1)
        self.layers = [LstmLayer(rng, d, cfg.lstm_hidden) for d in dims]
        self.width = cfg.lstm_hidden

    def __call__(self, seq):
        ids = _batched_ids(seq, self.seq_len)
        x = self.embedding(ids)
        steps = [x[:, t, :] for t in range(self.seq_len)]
        batch = ids.shape[0]
        for layer in self.layers:
            h = Tensor(np.zeros((batch, layer.hidden)))
            c = Tensor(np.zeros((batch, layer.hidden)))
            outs = []
            for xt in steps:
                h, c = lstm_cell(xt, h, c, layer.w_ih, layer.w_hh, layer.bias)
                outs.append(h)
            steps = outs
        return steps[-1]


# --------------------------------------------------------------------------
# CNN

def conv1d_windows(width, kernel, stride):
    starts = np.arange(0, width - kernel + 1, stride)
    return starts[:, None] + np.arange(kernel)[None, :]


def conv1d(x, kernel, bias, stride):
    """Valid 1-D correlation of rows of ``x`` (B, W) with ``kernel`` (k,)."""
    x = as_tensor(x)
    idx = conv1d_windows(x.shape[-1], kernel.shape[0], stride)
    windows = x[:, idx]  # (B, n_windows, k)
    out = matmul(windows, reshape(kernel, (kernel.shape[0], 1)))
    out = reshape(out, out.shape[:-1])
    return out + bias if bias is not None else out


class CnnExtractor(Module):
    """Flatten embeddings to L*d, apply one filter per kernel size, concatenate."""

    def __init__(self, rng, cfg):
        self.seq_len = cfg.seq_len
        self.stride = cfg.cnn_stride
        self.embedding = EmbeddingTable(rng, cfg.token_dim)
        self.kernels = [uniform_init(rng, (k,), k) for k in cfg.cnn_kernels]
        self.biases = [uniform_init(rng, (1,), k) for k in cfg.cnn_kernels]
        self.width = sum(cfg.cnn_windows)

    def __call__(self, seq):
        ids = _batched_ids(seq, self.seq_len)
        x = reshape(self.embedding(ids), (ids.shape[0], -1))
        return concat([conv1d(x, k, b, self.stride) for k, b in zip(self.kernels, self.biases)],
                      axis=-1)


def make_seq_extractor(rng, cfg):
    kinds = {"transformer": TransformerExtractor, "lstm": LstmExtractor, "cnn": CnnExtractor}
    return kinds[cfg.seq_extractor](rng, cfg)
