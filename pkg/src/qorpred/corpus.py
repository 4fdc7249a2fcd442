"""Sequence-corpus records and on-disk corpus layout.

A corpus directory holds ``corpus.csv`` (one record per line,
``<circuit_id>,<tok0> ... <tokL-1>,<raw_label>``, no header) and a
``graphs/`` directory with one ``<circuit_id>.aig`` graph file per circuit.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .circuit import load_graph, write_graph
from .errors import CorpusFormatError, QorError, TokenError
from .sequence import SEQ_LEN, format_sequence, tokenize

CORPUS_FILE = "corpus.csv"
GRAPH_DIR = "graphs"
GRAPH_SUFFIX = ".aig"

_CIRCUIT_ID = re.compile(r"[A-Za-z0-9_.\-]+\Z")
_LABEL = re.compile(r"(?:0|[1-9][0-9]*)\Z")


@dataclass(frozen=True)
class DatasetRecord:
    circuit_id: str
    seq: tuple
    label: int


def parse_record(line, lineno=None, seq_len=SEQ_LEN):
    body = line.rstrip("\r\n")
    parts = body.split(",")
    if len(parts) != 3:
        raise CorpusFormatError(f"expected 3 comma-separated fields, got {len(parts)}", lineno)
    cid, seq_text, label_text = parts
    if not _CIRCUIT_ID.match(cid):
        raise CorpusFormatError(f"invalid circuit id {cid!r}", lineno)
    try:
        seq = tuple(tokenize(seq_text.split(" ") if seq_text else []))
    except TokenError as exc:
        raise CorpusFormatError(str(exc), lineno) from None
    if seq_len is not None and len(seq) != seq_len:
        raise CorpusFormatError(f"sequence has {len(seq)} tokens, expected {seq_len}", lineno)
    if not seq:
        raise CorpusFormatError("empty sequence", lineno)
    if not _LABEL.match(label_text):
        raise CorpusFormatError(f"invalid label {label_text!r}", lineno)
    return DatasetRecord(cid, seq, int(label_text))


def format_record(rec):
    return f"{rec.circuit_id},{format_sequence(rec.seq)},{rec.label}"


def parse_corpus(text, seq_len=SEQ_LEN):
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            records.append(parse_record(line, lineno, seq_len))
    return records


@dataclass
class Corpus:
    records: list
    graphs: dict = field(default_factory=dict)
    checksum: str = ""

    def graph(self, circuit_id):
        return self.graphs[circuit_id]

    def circuits(self):
        return sorted({r.circuit_id for r in self.records})

    def labels(self, indices=None):
        idx = range(len(self.records)) if indices is None else indices
        return [self.records[i].label for i in idx]

    def __len__(self):
        return len(self.records)


def load_corpus(path, seq_len=SEQ_LEN):
    """Load a corpus directory (or a ``corpus.csv`` path next to ``graphs/``)."""
    path = Path(path)
    root = path if path.is_dir() else path.parent
    csv_path = root / CORPUS_FILE if path.is_dir() else path
    raw = csv_path.read_bytes()
    records = parse_corpus(raw.decode("utf-8"), seq_len)
    if not records:
        raise CorpusFormatError(f"{csv_path} contains no records")
    digest = hashlib.sha256(raw)
    graphs = {}
    for cid in sorted({r.circuit_id for r in records}):
        gpath = root / GRAPH_DIR / f"{cid}{GRAPH_SUFFIX}"
        if not gpath.exists():
            raise QorError(f"no graph file for circuit {cid!r} at {gpath}")
        graphs[cid] = load_graph(gpath)
        digest.update(gpath.read_bytes())
    return Corpus(records, graphs, digest.hexdigest())


def write_corpus(root, corpus):
    root = Path(root)
    (root / GRAPH_DIR).mkdir(parents=True, exist_ok=True)
    for cid in sorted(corpus.graphs):
        write_graph(corpus.graphs[cid], root / GRAPH_DIR / f"{cid}{GRAPH_SUFFIX}")
    text = "".join(format_record(r) + "\n" for r in corpus.records)
    (root / CORPUS_FILE).write_text(text, encoding="utf-8")
    return root / CORPUS_FILE
