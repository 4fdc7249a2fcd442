"""Synthetic circuits, sequences and labels, plus external-corpus adapters."""

from __future__ import annotations

import math
import re
import shlex
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuit import AND, PI, PO, AigGraph
from .corpus import Corpus, DatasetRecord, write_corpus
from .errors import CapabilityError, ExternalToolError, ParameterError, ToolOutputError
from .rng import make_rng
from .sequence import SEQ_LEN, TOKENS, VOCAB_SIZE, parse_sequence

TOKEN_WEIGHTS = {
    "refactor": 0.005,
    "refactor-z": 0.002,
    "rewrite": 0.006,
    "rewrite-z": 0.002,
    "resub": 0.006,
    "resub-z": 0.003,
    "balance": 0.004,
}
DECAY = 0.98
MAX_REDUCTION = 0.6
MIN_NODES = 7


@dataclass(frozen=True)
class SynthSpec:
    circuits: int = 10
    min_nodes: int = 30
    max_nodes: int = 80
    seqs: int = 100
    seq_len: int = SEQ_LEN
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.min_nodes < MIN_NODES or self.max_nodes < self.min_nodes:
            raise ParameterError(
                f"node range [{self.min_nodes}, {self.max_nodes}] invalid (minimum {MIN_NODES})")
        if self.circuits < 1 or self.seqs < 1 or self.seq_len < 1:
            raise ParameterError("circuits, seqs and seq_len must all be >= 1")
        if self.noise < 0:
            raise ParameterError("noise must be >= 0")


def gen_circuit(n_target, seed=0, n_pi=None, n_po=None, rng=None):
    """Random layered AIG with exactly ``n_target`` nodes.

    Node ids: PIs first, then AND nodes layer by layer, then POs. Each AND
    takes one fanin from the previous layer and one from any earlier layer.
    """
    if n_target < MIN_NODES:
        raise ParameterError(f"n_target must be >= {MIN_NODES}, got {n_target}")
    rng = make_rng(seed) if rng is None else rng
    if n_pi is None:
        n_pi = int(rng.integers(3, max(3, n_target // 5) + 1))
    if n_po is None:
        n_po = int(rng.integers(1, max(1, n_target // 10) + 1))
    n_and = n_target - n_pi - n_po
    if n_pi < 2 or n_po < 1 or n_and < 1:
        raise ParameterError(f"cannot build {n_target} nodes from {n_pi} PIs and {n_po} POs")

    layers = [list(range(n_pi))]
    next_id = n_pi
    remaining = n_and
    max_width = max(2, n_and // 4)
    while remaining:
        width = min(remaining, int(rng.integers(1, max_width + 1)))
        layers.append(list(range(next_id, next_id + width)))
        next_id += width
        remaining -= width

    edges = []
    fanout = np.zeros(n_target, dtype=np.int64)
    for depth in range(1, len(layers)):
        earlier = [v for layer in layers[:depth] for v in layer]
        for v in layers[depth]:
            a = layers[depth - 1][int(rng.integers(len(layers[depth - 1])))]
            choices = [u for u in earlier if u != a]
            b = choices[int(rng.integers(len(choices)))]
            edges += [(a, v), (b, v)]
            fanout[[a, b]] += 1

    ands = list(range(n_pi, n_pi + n_and))
    sinks = [v for v in ands if fanout[v] == 0][::-1]  # deepest first
    drivers = []
    for _ in range(n_po):
        drivers.append(sinks.pop(0) if sinks else ands[int(rng.integers(len(ands)))])
    for k, d in enumerate(drivers):
        edges.append((d, n_pi + n_and + k))

    types = [PI] * n_pi + [AND] * n_and + [PO] * n_po
    inverted = ([0] * n_pi + [int(x) for x in rng.integers(0, 3, size=n_and)]
                + [int(x) for x in rng.integers(0, 2, size=n_po)])
    return AigGraph.build(types, inverted, edges)


def reduction(g, seq, depth=None):
    depth = g.depth() if depth is None else depth
    total = 0.0
    for t, tok in enumerate(seq):
        total += TOKEN_WEIGHTS[TOKENS[int(tok)]] * DECAY ** t * (1.0 + 0.1 * ((depth + t) % 3))
    return min(MAX_REDUCTION, total)


def synthetic_qor(g, seq, depth=None):
    """Deterministic stand-in label: AND count after a sequence-dependent reduction.

    Rounds half up.
    """
    return int(math.floor(g.n_and * (1.0 - reduction(g, seq, depth)) + 0.5))


def gen_corpus(spec, out=None):
    """Generate ``spec.circuits`` circuits, each paired with one shared sequence set.

    Writes ``corpus.csv`` and ``graphs/`` under ``out`` when given.
    """
    rng = make_rng(spec.seed)
    graphs = {}
    for c in range(spec.circuits):
        n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
        graphs[f"c{c:03d}"] = gen_circuit(n, rng=rng)
    seqs = [tuple(int(x) for x in rng.integers(0, VOCAB_SIZE, size=spec.seq_len))
            for _ in range(spec.seqs)]
    records = []
    for cid, g in graphs.items():
        depth = g.depth()
        for seq in seqs:
            y = synthetic_qor(g, seq, depth)
            if spec.noise:
                value = g.n_and * (1.0 - reduction(g, seq, depth)) + spec.noise * g.n_and * rng.normal()
                y = int(min(g.n_and, max(0, math.floor(value + 0.5))))
            records.append(DatasetRecord(cid, seq, y))
    corpus = Corpus(records, graphs)
    if out is not None:
        write_corpus(out, corpus)
    return corpus


# --------------------------------------------------------------------------
# external corpora and tools

def adapt_records(rows):
    """Map ``(circuit_id, script, node_count)`` rows to records.

    ``script`` may be a ``;``-separated tool script (``rewrite -z; balance``)
    or canonical whitespace-separated tokens.
    """
    return [DatasetRecord(str(cid), tuple(parse_sequence(script)), int(count))
            for cid, script, count in rows]


def graph_from_arrays(node_types, n_inverted, edge_index):
    """Build an AigGraph from per-node arrays and a (2, E) driver/sink edge index."""
    edge_index = np.asarray(edge_index, dtype=np.int64)
    return AigGraph.build(node_types, n_inverted, edge_index.T if edge_index.shape[0] == 2 else edge_index)


DEFAULT_TEMPLATE = '{tool} -c "read {circuit}; strash; {commands}print_stats"'
_AND_COUNT = re.compile(r"\band\s*=\s*(\d+)")


def tool_commands(seq):
    return "".join(f"{TOKENS[int(t)].replace('-z', ' -z')}; " for t in seq)


def run_external_synthesis(tool_path, circuit_file, seq, template=DEFAULT_TEMPLATE, timeout=600):
    """Run a synthesis tool on ``circuit_file`` and return the reported AND count."""
    tool = shutil.which(str(tool_path)) or (str(tool_path) if Path(tool_path).is_file() else None)
    if tool is None:
        raise CapabilityError(f"synthesis tool {tool_path!r} not found")
    command = template.format(tool=shlex.quote(tool), circuit=circuit_file, commands=tool_commands(seq))
    try:
        proc = subprocess.run(shlex.split(command), capture_output=True, text=True, timeout=timeout)
    except OSError as exc:
        raise CapabilityError(f"cannot execute {tool}: {exc}") from None
    if proc.returncode != 0:
        raise ExternalToolError(f"{tool} exited with status {proc.returncode}: {proc.stderr.strip()[:200]}")
    matches = _AND_COUNT.findall(proc.stdout)
    if not matches:
        raise ToolOutputError(f"no node count in {tool} output")
    count = int(matches[-1])
    if count <= 0:
        raise ToolOutputError(f"{tool} reported non-positive node count {count}")
    return count
