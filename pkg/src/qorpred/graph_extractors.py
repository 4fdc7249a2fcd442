"""Circuit feature extractors: GCN, GAT and GraphSage over batched AIGs.

Messages flow along stored driver -> sink edges, so each node aggregates
over its in-neighbors plus a self-loop. With ``symmetrize_edges`` every edge
is also used in reverse.

Each layer function returns the pre-activation aggregate unless an
``activation`` is given; the extractor applies batch norm between the
aggregate and the nonlinearity.
"""

import numpy as np

from .circuit import AigGraph, batch_graphs
from .errors import ShapeError
from .nn import Module, uniform_init
from .tensor import (
    BatchNormState,
    Tensor,
    activation as apply_activation,
    as_tensor,
    batch_norm,
    concat,
    gather_rows,
    leaky_relu,
    matmul,
    reshape,
    segment_reduce,
    segment_softmax,
    scatter_edges,
)

NODE_TYPES = 3


def as_batch(g):
    return batch_graphs([g]) if isinstance(g, AigGraph) else g


def message_edges(g, symmetrize=False):
    """(src, dst) arrays including one self-loop per node."""
    edges = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    loops = np.arange(len(g.types), dtype=np.int64)
    return np.concatenate([src, loops]), np.concatenate([dst, loops])


def node_input_embed(g, type_table):
    """Per-node ``type_table[type] ++ [inverted-input count]``."""
    g = as_batch(g)
    type_vecs = gather_rows(type_table, g.types)
    counts = Tensor(np.asarray(g.inverted, dtype=np.float64)[:, None])
    return concat([type_vecs, counts], axis=-1)


def _check_width(h, w):
    if h.shape[-1] != w.shape[0]:
        raise ShapeError(f"node features {h.shape} do not match weight {w.shape}")


def gcn_layer(h, g, w, symmetrize=False, activation=None):
    """Degree-normalized sum over in-neighbors and self, d~ = in-degree + 1."""
    h, g = as_tensor(h), as_batch(g)
    _check_width(h, w)
    src, dst = message_edges(g, symmetrize)
    deg = np.bincount(dst, minlength=h.shape[0]).astype(np.float64)
    norm = 1.0 / np.sqrt(deg[src] * deg[dst])
    out = scatter_edges(matmul(h, w), src, dst, h.shape[0], norm)
    return apply_activation(out, activation)


def gat_attention(h_i, neighbors, w, att, slope=0.2):
    """Attention of node ``i`` over ``neighbors`` rows (plain numpy, one head).

    ``att`` has length 2 * d_out: the first half scores the target, the
    second half the source.
    """
    h_i, neighbors = np.asarray(h_i, float), np.asarray(neighbors, float)
    w, att = np.asarray(w, float), np.asarray(att, float)
    d = w.shape[1]
    scores = np.array([att[:d] @ (h_i @ w) + att[d:] @ (h_j @ w) for h_j in neighbors])
    scores = np.where(scores > 0, scores, slope * scores)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def gat_layer(h, g, w, att, heads, concat_heads=True, slope=0.2, symmetrize=False,
              activation=None, return_attention=False):
    """Multi-head attention aggregation.

    ``w`` is (d_in, heads * d_out) and ``att`` is (heads, 2 * d_out). Heads
    are concatenated or averaged.
    """
    h, g = as_tensor(h), as_batch(g)
    _check_width(h, w)
    n = h.shape[0]
    d = w.shape[1] // heads
    if att.shape != (heads, 2 * d):
        raise ShapeError(f"attention vector shape {att.shape}, expected {(heads, 2 * d)}")
    src, dst = message_edges(g, symmetrize)
    wh = matmul(h, w)
    outs, alphas = [], []
    for k in range(heads):
        whk = wh[:, k * d:(k + 1) * d]
        s_tgt = reshape(matmul(whk, reshape(att[k, :d], (d, 1))), (n,))
        s_src = reshape(matmul(whk, reshape(att[k, d:], (d, 1))), (n,))
        e = leaky_relu(s_tgt[dst] + s_src[src], slope)
        alpha = segment_softmax(e, dst, n)
        alphas.append(alpha)
        outs.append(scatter_edges(whk, src, dst, n, alpha))
    if concat_heads:
        out = concat(outs, axis=-1)
    else:
        out = outs[0]
        for o in outs[1:]:
            out = out + o
        out = out * (1.0 / heads)
    out = apply_activation(out, activation)
    if return_attention:
        return out, (src, dst, np.stack([a.data for a in alphas], axis=1))
    return out


def sage_layer(h, g, w, symmetrize=False, activation=None):
    """``W . mean({h_v} U {h_u : u in in(v)})``."""
    h, g = as_tensor(h), as_batch(g)
    _check_width(h, w)
    src, dst = message_edges(g, symmetrize)
    deg = np.bincount(dst, minlength=h.shape[0]).astype(np.float64)
    avg = scatter_edges(h, src, dst, h.shape[0], 1.0 / deg[dst])
    return apply_activation(matmul(avg, w), activation)


def readout(h, graph_ids, n_graphs):
    """Per-graph concatenation of global max and global mean pooling."""
    return concat([segment_reduce(h, graph_ids, n_graphs, "max"),
                   segment_reduce(h, graph_ids, n_graphs, "mean")], axis=-1)


class GraphExtractor(Module):
    """node embedding -> layer -> BN -> act -> layer -> BN -> act -> readout."""

    def __init__(self, rng, cfg):
        self.kind = cfg.graph_extractor
        self.symmetrize = cfg.symmetrize_edges
        self.slope = cfg.leaky_slope
        self.heads = cfg.gat_heads
        d_in = cfg.type_dim + 1
        hid = cfg.gnn_hidden
        self.type_table = Tensor(rng.uniform(-1.0, 1.0, size=(NODE_TYPES, cfg.type_dim)),
                                 requires_grad=True)
        if self.kind == "gat":
            per_head = hid // self.heads
            self.w1 = uniform_init(rng, (d_in, self.heads * per_head), d_in)
            self.att1 = uniform_init(rng, (self.heads, 2 * per_head), per_head)
            self.w2 = uniform_init(rng, (hid, self.heads * hid), hid)
            self.att2 = uniform_init(rng, (self.heads, 2 * hid), hid)
        else:
            self.w1 = uniform_init(rng, (d_in, hid), d_in)
            self.w2 = uniform_init(rng, (hid, hid), hid)
        self.bn1 = BatchNormState(hid)
        self.bn2 = BatchNormState(hid)
        self.act = "elu" if self.kind == "gat" else "relu"
        self.width = 2 * hid

    def _layer(self, index, h, g):
        w = self.w1 if index == 1 else self.w2
        if self.kind == "gcn":
            return gcn_layer(h, g, w, self.symmetrize)
        if self.kind == "sage":
            return sage_layer(h, g, w, self.symmetrize)
        att = self.att1 if index == 1 else self.att2
        return gat_layer(h, g, w, att, self.heads, concat_heads=(index == 1),
                         slope=self.slope, symmetrize=self.symmetrize)

    def node_embeddings(self, g):
        g = as_batch(g)
        h = node_input_embed(g, self.type_table)
        for index, bn in ((1, self.bn1), (2, self.bn2)):
            h = apply_activation(batch_norm(self._layer(index, h, g), bn, self.mode), self.act)
        return h

    def __call__(self, g):
        g = as_batch(g)
        return readout(self.node_embeddings(g), g.graph_ids, g.n_graphs)


def graph_extract(g, extractor):
    return extractor(as_batch(g))
