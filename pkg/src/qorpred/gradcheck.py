"""Central-difference gradient checks for every differentiable operation.

Each check builds a scalar loss from random inputs in [-1, 1], runs the
reverse pass once, then compares a sample of gradient entries against
``(f(x + h) - f(x - h)) / 2h``. The relative error of an entry is
``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``.

The random inputs come from fixed seeds, so the suite is deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .circuit import AigGraph, batch_graphs
from .config import ModelConfig
from .graph_extractors import GraphExtractor, gat_layer, gcn_layer, readout, sage_layer
from .model import JointModel, mse_loss
from .nn import Linear
from .rng import make_rng
from .seq_extractors import (
    CnnExtractor,
    LstmExtractor,
    TransformerBlock,
    TransformerExtractor,
    conv1d,
    lstm_cell,
    multi_head,
    self_attention_head,
)

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    worst: float
    entries: int
    seconds: float

    @property
    def ok(self):
        return self.worst < TOLERANCE


def max_rel_error(loss_fn, tensors, h=STEP, max_entries=None, seed=0):
    """Worst relative error over (a sample of) the entries of ``tensors``."""
    for t in tensors:
        t.zero_grad()
    T.backward(loss_fn())
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for t in tensors:
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), FLOOR))
            count += 1
    return worst, count


def _param(rng, *shape):
    return T.Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def six_node_graph():
    return AigGraph.build([0, 0, 0, 2, 2, 1], [0, 0, 0, 1, 2, 1],
                          [(0, 3), (1, 3), (2, 4), (3, 4), (4, 5)])


def four_node_graph():
    return AigGraph.build([0, 0, 2, 1], [0, 0, 1, 0], [(0, 2), (1, 2), (2, 3)])


def tiny_config(seq_extractor="transformer", graph_extractor="sage", **kw):
    base = dict(seq_len=5, d_model=4, heads=2, ff_width=8, blocks=2, seq_out=6, token_dim=3,
                lstm_hidden=6, lstm_layers=2, cnn_kernels=(3, 6, 9), cnn_stride=3,
                type_dim=3, gnn_hidden=8, gat_heads=2, head_widths=(16, 8, 8))
    base.update(kw)
    return ModelConfig(seq_extractor=seq_extractor, graph_extractor=graph_extractor, **base)


# --------------------------------------------------------------------------
# individual checks; each returns (loss_fn, tensors, max_entries)

def _simple(rng, out_fn, tensors, max_entries=None):
    shape = out_fn().shape
    c = rng.uniform(-1.0, 1.0, size=shape)
    return (lambda: T.tsum(T.mul(out_fn(), c))), tensors, max_entries


def check_arith(rng):
    a, b = _param(rng, 3, 4), _param(rng, 1, 4)
    b.data += 2.0 * np.sign(b.data)  # keep the divisor away from 0
    return _simple(rng, lambda: T.div(T.mul(T.add(a, b), T.sub(a, b)), b), [a, b])


def check_matmul(rng):
    a, b = _param(rng, 4, 5), _param(rng, 5, 2)
    return _simple(rng, lambda: T.matmul(a, b), [a, b])


def check_batched_matmul(rng):
    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 2)
    return _simple(rng, lambda: T.matmul(a, b), [a, b])


def check_reductions(rng):
    x = _param(rng, 3, 4)
    return _simple(rng, lambda: T.concat([T.tsum(x, axis=0), T.mean(x, axis=0)], axis=0), [x])


def check_shape_ops(rng):
    x = _param(rng, 2, 3, 4)
    return _simple(rng, lambda: T.transpose(T.reshape(x, (6, 4)), (1, 0)), [x])


def check_concat(rng):
    a, b = _param(rng, 3, 2), _param(rng, 3, 4)
    return _simple(rng, lambda: T.concat([a, b], axis=1), [a, b])


def check_getitem(rng):
    x = _param(rng, 5, 4)
    idx = np.array([0, 2, 2, 4])
    return _simple(rng, lambda: T.concat([x[idx], x[1:5, :]], axis=0), [x])


def check_gather_rows(rng):
    table = _param(rng, 7, 3)
    ids = np.array([[2, 4, 0], [6, 2, 2]])
    return _simple(rng, lambda: T.gather_rows(table, ids), [table])


def _unary(op, positive=False):
    def check(rng):
        x = _param(rng, 3, 4)
        if positive:
            x.data = np.abs(x.data) + 0.5
        return _simple(rng, lambda: op(x), [x])
    return check


def check_softmax(rng):
    x = _param(rng, 3, 6)
    return _simple(rng, lambda: T.softmax(x, axis=-1), [x])


def check_layer_norm(rng):
    x, g, b = _param(rng, 2, 3, 4), _param(rng, 4), _param(rng, 4)
    return _simple(rng, lambda: T.layer_norm(x, g, b), [x, g, b])


def check_batch_norm_train(rng):
    x = _param(rng, 6, 3)
    state = T.BatchNormState(3)
    state.gain.data = rng.uniform(0.5, 1.5, size=3)
    state.bias.data = rng.uniform(-1, 1, size=3)
    return _simple(rng, lambda: T.batch_norm(x, state, "train"), [x, state.gain, state.bias])


def check_batch_norm_eval(rng):
    x = _param(rng, 6, 3)
    state = T.BatchNormState(3)
    state.running_mean = rng.uniform(-1, 1, size=3)
    state.running_var = rng.uniform(0.5, 2, size=3)
    return _simple(rng, lambda: T.batch_norm(x, state, "eval"), [x, state.gain, state.bias])


def check_dropout(rng):
    x = _param(rng, 4, 5)
    return _simple(rng, lambda: T.dropout(x, 0.3, "train", make_rng(11)), [x])


def _segment(kind):
    def check(rng):
        x = _param(rng, 6, 3)
        ids = np.array([0, 1, 0, 2, 1, 0])
        return _simple(rng, lambda: T.segment_reduce(x, ids, 3, kind), [x])
    return check


def check_segment_softmax(rng):
    x = _param(rng, 6, 2)
    ids = np.array([0, 1, 0, 2, 1, 0])
    return _simple(rng, lambda: T.segment_softmax(x, ids, 3), [x])


def check_scatter_edges(rng):
    x, w = _param(rng, 4, 3), _param(rng, 5)
    src, dst = np.array([0, 1, 2, 3, 0]), np.array([1, 2, 3, 3, 0])
    return _simple(rng, lambda: T.scatter_edges(x, src, dst, 4, w), [x, w])


def check_mse(rng):
    p, y = _param(rng, 7), rng.uniform(-1, 1, size=7)
    return (lambda: mse_loss(p, T.Tensor(y))), [p], None


def check_mlp(rng):
    x = rng.uniform(-1, 1, size=(5, 4))
    l1, l2 = Linear(rng, 4, 6), Linear(rng, 6, 1)
    return (lambda: T.tsum(T.mul(l2(T.tanh(l1(T.Tensor(x)))), 1.0)),
            [l1.weight, l1.bias, l2.weight, l2.bias], None)


def check_attention_head(rng):
    x, wq, wk, wv = _param(rng, 5, 4), _param(rng, 4, 2), _param(rng, 4, 2), _param(rng, 4, 2)
    return _simple(rng, lambda: self_attention_head(x, wq, wk, wv), [x, wq, wk, wv])


def check_multi_head(rng):
    x = _param(rng, 2, 5, 4)
    ws = [[_param(rng, 4, 2) for _ in range(2)] for _ in range(3)]
    wo = _param(rng, 4, 4)
    return _simple(rng, lambda: multi_head(x, ws[0], ws[1], ws[2], wo),
                   [x, wo] + [w for group in ws for w in group])


def check_transformer_block(rng):
    x = _param(rng, 2, 5, 4)
    block = TransformerBlock(rng, 4, 2, 8)
    return _simple(rng, lambda: block(x), [x] + block.parameters())


def check_lstm_cell(rng):
    x, h, c = _param(rng, 3, 2), _param(rng, 3, 4), _param(rng, 3, 4)
    w_ih, w_hh, b = _param(rng, 2, 16), _param(rng, 4, 16), _param(rng, 16)

    def out():
        h2, c2 = lstm_cell(x, h, c, w_ih, w_hh, b)
        return T.concat([h2, c2], axis=-1)

    return _simple(rng, out, [x, h, c, w_ih, w_hh, b])


def check_conv1d(rng):
    x, k, b = _param(rng, 2, 15), _param(rng, 6), _param(rng, 1)
    return _simple(rng, lambda: conv1d(x, k, b, 3), [x, k, b])


def _graph_layer(kind):
    def check(rng):
        g = six_node_graph()
        h = _param(rng, 6, 3)
        if kind == "gat":
            w, att = _param(rng, 3, 4), _param(rng, 2, 4)
            return _simple(rng, lambda: gat_layer(h, g, w, att, 2), [h, w, att])
        w = _param(rng, 3, 4)
        fn = gcn_layer if kind == "gcn" else sage_layer
        return _simple(rng, lambda: fn(h, g, w), [h, w])
    return check


def check_readout(rng):
    h = _param(rng, 7, 3)
    ids = np.array([0, 0, 0, 1, 1, 1, 1])
    return _simple(rng, lambda: readout(h, ids, 2), [h])


def _seq_path(cls):
    def check(rng):
        cfg = tiny_config()
        ext = cls(rng, cfg)
        seqs = rng.integers(0, 7, size=(3, cfg.seq_len))
        return (*_simple(rng, lambda: ext(seqs), ext.parameters())[:2], 6)
    return check


def _full_size_seq_path(cls):
    def check(rng):
        cfg = ModelConfig()
        ext = cls(rng, cfg)
        seqs = rng.integers(0, 7, size=(2, cfg.seq_len))
        return (*_simple(rng, lambda: ext(seqs), ext.parameters())[:2], 3)
    return check


def _graph_path(kind):
    def check(rng):
        ext = GraphExtractor(rng, tiny_config(graph_extractor=kind))
        batch = batch_graphs([six_node_graph(), four_node_graph()])
        return (*_simple(rng, lambda: ext(batch), ext.parameters())[:2], 8)
    return check


def _joint_path(seq_kind, graph_kind):
    def check(rng):
        model = JointModel(rng, tiny_config(seq_kind, graph_kind))
        batch = batch_graphs([four_node_graph(), six_node_graph(), four_node_graph()])
        seqs = rng.integers(0, 7, size=(3, 5))
        y = T.Tensor(rng.uniform(-1, 1, size=3))
        return (lambda: mse_loss(model(batch, seqs, make_rng(3)), y)), model.parameters(), 4
    return check


CHECKS = {
    "arith": check_arith,
    "matmul": check_matmul,
    "matmul_batched": check_batched_matmul,
    "sum_mean": check_reductions,
    "reshape_transpose": check_shape_ops,
    "concat": check_concat,
    "getitem": check_getitem,
    "gather_rows": check_gather_rows,
    "exp": _unary(T.exp),
    "log": _unary(T.log, positive=True),
    "relu": _unary(T.relu),
    "leaky_relu": _unary(lambda x: T.leaky_relu(x, 0.2)),
    "elu": _unary(T.elu),
    "sigmoid": _unary(lambda x: T.sigmoid(x)),
    "tanh": _unary(lambda x: T.tanh(x)),
    "softmax": check_softmax,
    "layer_norm": check_layer_norm,
    "batch_norm_train": check_batch_norm_train,
    "batch_norm_eval": check_batch_norm_eval,
    "dropout": check_dropout,
    "segment_sum": _segment("sum"),
    "segment_mean": _segment("mean"),
    "segment_max": _segment("max"),
    "segment_softmax": check_segment_softmax,
    "scatter_edges": check_scatter_edges,
    "mse_loss": check_mse,
    "mlp": check_mlp,
    "attention_head": check_attention_head,
    "multi_head": check_multi_head,
    "transformer_block": check_transformer_block,
    "lstm_cell": check_lstm_cell,
    "conv1d": check_conv1d,
    "gcn_layer": _graph_layer("gcn"),
    "gat_layer": _graph_layer("gat"),
    "sage_layer": _graph_layer("sage"),
    "readout": check_readout,
    "transformer_extract": _seq_path(TransformerExtractor),
    "lstm_extract": _seq_path(LstmExtractor),
    "cnn_extract": _seq_path(CnnExtractor),
    "transformer_extract_full": _full_size_seq_path(TransformerExtractor),
    "lstm_extract_full": _full_size_seq_path(LstmExtractor),
    "cnn_extract_full": _full_size_seq_path(CnnExtractor),
    "graph_extract_gcn": _graph_path("gcn"),
    "graph_extract_gat": _graph_path("gat"),
    "graph_extract_sage": _graph_path("sage"),
}
for _s in ("transformer", "lstm", "cnn"):
    for _g in ("gcn", "gat", "sage"):
        CHECKS[f"joint_{_s}_{_g}"] = _joint_path(_s, _g)


def run_check(name, seed=0):
    rng = make_rng(1000 + seed)
    t0 = time.perf_counter()
    loss_fn, tensors, entries = CHECKS[name](rng)
    worst, count = max_rel_error(loss_fn, tensors, max_entries=entries, seed=seed)
    return CheckResult(name, worst, count, time.perf_counter() - t0)


def run_all(names=None, seed=0):
    return [run_check(n, seed) for n in (names or CHECKS)]
