"""Joint sequence/graph regression model, training loop and evaluation.

Random stream order for a run seeded with ``seed`` (one Philox stream):

1. dataset split: one permutation per circuit, circuits in sorted id order;
2. parameter initialization, modules in construction order
   (sequence extractor, graph extractor, fusion head);
3. per epoch: one permutation of the training indices, then dropout masks
   in forward order for each batch.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .circuit import batch_graphs
from .config import ModelConfig, RunConfig
from .errors import ContractError, DivergenceError, ParameterError, ShapeError
from .graph_extractors import GraphExtractor
from .nn import Linear, Module
from .optim import Adam
from .rng import make_rng
from .seq_extractors import make_seq_extractor
from .tensor import Tensor, as_tensor, backward, concat, dropout, gather_rows, mul, relu, reshape, sub, tsum

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2
MIN_SEQS_PER_CIRCUIT = 5


def fuse(seq_feat, graph_feat):
    """Concatenate sequence features (first) with graph features."""
    seq_feat, graph_feat = as_tensor(seq_feat), as_tensor(graph_feat)
    if seq_feat.shape[:-1] != graph_feat.shape[:-1]:
        raise ShapeError(f"cannot fuse {seq_feat.shape} with {graph_feat.shape}")
    return concat([seq_feat, graph_feat], axis=-1)


class FcHead(Module):
    def __init__(self, rng, d_in, widths, p):
        dims = [d_in, *widths]
        self.hidden = [Linear(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        self.out = Linear(rng, dims[-1], 1)
        self.p = p

    def __call__(self, x, rng=None):
        for layer in self.hidden:
            x = dropout(relu(layer(x)), self.p, self.mode, rng)
        y = self.out(x)
        return reshape(y, y.shape[:-1])


class JointModel(Module):
    def __init__(self, rng, cfg: ModelConfig):
        self.config = cfg
        self.seq = make_seq_extractor(rng, cfg)
        self.graph = GraphExtractor(rng, cfg)
        self.head = FcHead(rng, cfg.fused_width, cfg.head_widths, cfg.dropout)

    def features(self, batch, seqs):
        return fuse(self.seq(seqs), self.graph(batch))

    def __call__(self, batch, seqs, rng=None):
        """Normalized predictions, one per (graph, sequence) pair."""
        return self.head(self.features(batch, seqs), rng)

    def predict_pairs(self, graphs, seqs):
        """Eval-mode predictions; each distinct graph is embedded once."""
        keys, unique = [], {}
        for g in graphs:
            keys.append(unique.setdefault(id(g), (len(unique), g))[0])
        order = sorted(unique.values())
        gfeat = self.graph(batch_graphs([g for _, g in order]))
        x = fuse(self.seq(np.asarray(seqs)), gather_rows(gfeat, np.array(keys)))
        return self.head(x).data


@dataclass
class ModelBundle:
    config: ModelConfig
    model: JointModel
    label_mean: float
    label_std: float
    seed: int = 0

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.label_mean) / self.label_std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.label_std + self.label_mean


def label_stats(labels):
    y = np.asarray(labels, dtype=np.float64)
    mu = float(y.mean())
    sd = float(y.std())
    return mu, (sd if sd > 0 else 1.0)


def predict(bundle, g, seq):
    """Denormalized node-count prediction for one circuit and sequence."""
    seq = np.asarray(seq)
    if seq.ndim != 1 or len(seq) != bundle.config.seq_len:
        raise ShapeError(f"bundle expects sequences of length {bundle.config.seq_len}, got {seq.shape}")
    model = bundle.model.eval()
    z = model(batch_graphs([g]), seq[None, :]).data[0]
    return float(bundle.denormalize(z))


def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} vs target shape {target.shape}")
    if pred.size == 0:
        raise ContractError("mse_loss of an empty batch")
    diff = sub(pred, target)
    return mul(tsum(mul(diff, diff)), 1.0 / pred.size)


# --------------------------------------------------------------------------
# dataset split

@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list


def split_dataset(corpus, seed=0, rng=None):
    """Per circuit: 20% of its sequences to test, 20% of the rest to validation."""
    records = corpus.records if hasattr(corpus, "records") else corpus
    if not records:
        raise ParameterError("cannot split an empty corpus")
    rng = make_rng(seed) if rng is None else rng
    by_circuit = {}
    for i, r in enumerate(records):
        by_circuit.setdefault(r.circuit_id, []).append(i)
    train, val, test = [], [], []
    for cid in sorted(by_circuit):
        idx = by_circuit[cid]
        if len(idx) < MIN_SEQS_PER_CIRCUIT:
            raise ParameterError(
                f"circuit {cid!r} has {len(idx)} sequences; at least {MIN_SEQS_PER_CIRCUIT} needed")
        perm = [idx[j] for j in rng.permutation(len(idx))]
        n_test = int(round(TEST_FRACTION * len(idx)))
        pool = perm[n_test:]
        n_val = int(round(VAL_FRACTION * len(pool)))
        test += perm[:n_test]
        val += pool[:n_val]
        train += pool[n_val:]
    return DatasetSplit(sorted(train), sorted(val), sorted(test))


# --------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    mae: float
    mae_raw: float
    predictions: np.ndarray       # normalized
    predictions_raw: np.ndarray   # node counts
    targets: np.ndarray           # normalized


def mean_abs(a, b):
    return math.fsum(abs(float(x) - float(y)) for x, y in zip(a, b)) / len(a)


def evaluate(bundle, corpus, indices=None, chunk=512):
    """MAE in normalized label units, plus per-record predictions.

    Records are processed in a canonical order so results do not depend on
    the order of ``indices``.
    """
    indices = list(range(len(corpus.records))) if indices is None else list(indices)
    if not indices:
        raise ParameterError("evaluate needs at least one record")
    recs = [corpus.records[i] for i in indices]
    order = sorted(range(len(recs)), key=lambda k: (recs[k].circuit_id, recs[k].seq, recs[k].label))
    model = bundle.model.eval()
    preds = np.empty(len(recs))
    for start in range(0, len(order), chunk):
        part = order[start:start + chunk]
        graphs = [corpus.graph(recs[k].circuit_id) for k in part]
        seqs = np.array([recs[k].seq for k in part], dtype=np.int64)
        preds[part] = model.predict_pairs(graphs, seqs)
    targets = bundle.normalize([r.label for r in recs])
    raw = bundle.denormalize(preds)
    return EvalResult(
        mae=mean_abs(preds, targets),
        mae_raw=mean_abs(raw, [r.label for r in recs]),
        predictions=preds,
        predictions_raw=raw,
        targets=targets,
    )


# --------------------------------------------------------------------------
# training

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_mae: float
    val_mae: float
    seconds: float = 0.0

    def line(self):
        return f"{self.epoch},{self.train_loss!r},{self.train_mae!r},{self.val_mae!r}"


@dataclass
class TrainResult:
    bundle: ModelBundle
    history: list = field(default_factory=list)
    split: DatasetSplit | None = None
    best_epoch: int = 0


def _batch_inputs(corpus, recs):
    graphs = batch_graphs([corpus.graph(r.circuit_id) for r in recs])
    seqs = np.array([r.seq for r in recs], dtype=np.int64)
    return graphs, seqs


def train(corpus, cfg: RunConfig, seed=None, split=None, model_config=None, progress=None,
          max_steps=None, stop=None):
    """Adam on MSE over z-normalized labels; keeps the best-validation epoch.

    ``max_steps`` bounds the total optimizer steps (the final epoch may be
    partial). ``stop(stats)`` returning true ends training after that epoch.
    If there is no validation set, the final epoch is kept.
    """
    seed = cfg.seed if seed is None else seed
    rng = make_rng(seed)
    if split is None:
        split = split_dataset(corpus, rng=rng)
    if not split.train:
        raise ParameterError("training split is empty")
    mcfg = model_config or cfg.model_config()
    model = JointModel(rng, mcfg)
    mu, sd = label_stats(corpus.labels(split.train))
    bundle = ModelBundle(mcfg, model, mu, sd, seed)
    opt = Adam(model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    history, best, best_epoch, steps = [], None, 0, 0
    best_state = None
    train_idx = np.asarray(split.train)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for start in range(0, len(train_idx), cfg.batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            if start == 0:
                perm = train_idx[rng.permutation(len(train_idx))]
            recs = [corpus.records[i] for i in perm[start:start + cfg.batch_size]]
            graphs, seqs = _batch_inputs(corpus, recs)
            target = Tensor(bundle.normalize([r.label for r in recs]))
            with np.errstate(over="ignore", invalid="ignore"):
                loss = mse_loss(model(graphs, seqs, rng), target)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(
                    f"loss became {value} at epoch {epoch}, step {steps + 1} (lr={cfg.lr})")
            opt.zero_grad()
            backward(loss)
            opt.step()
            steps += 1
            total += value * len(recs)
            count += len(recs)
        with np.errstate(over="ignore", invalid="ignore"):
            train_mae = evaluate(bundle, corpus, split.train).mae
            val_mae = evaluate(bundle, corpus, split.val).mae if split.val else float("nan")
        if not math.isfinite(train_mae):
            raise DivergenceError(f"training MAE became {train_mae} after epoch {epoch} (lr={cfg.lr})")
        stats = EpochStats(epoch, total / max(count, 1), train_mae, val_mae,
                           time.perf_counter() - t0)
        history.append(stats)
        if progress is not None:
            progress(stats)
        score = val_mae if split.val else -epoch
        if best is None or score < best:
            best, best_epoch = score, epoch
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        if (max_steps is not None and steps >= max_steps) or (stop is not None and stop(stats)):
            break
    model.load_state_arrays(best_state)
    model.eval()
    return TrainResult(bundle, history, split, best_epoch)


def write_history(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in history:
            fh.write(s.line() + "\n")
