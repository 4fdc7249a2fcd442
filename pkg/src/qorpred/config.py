"""Model and run configuration in a flat ``key=value`` text format.

Keys are written in a fixed canonical order (dataclass field order), so the
text of a :class:`ModelConfig` hashes to a stable fingerprint.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

SEQ_EXTRACTORS = ("transformer", "lstm", "cnn")
GRAPH_EXTRACTORS = ("gcn", "gat", "sage")


@dataclass(frozen=True)
class ModelConfig:
    seq_extractor: str = "transformer"
    graph_extractor: str = "sage"
    seq_len: int = 20
    # transformer
    d_model: int = 4
    heads: int = 2
    ff_width: int = 32
    blocks: int = 3
    seq_out: int = 50
    # lstm / cnn share the narrow token table
    token_dim: int = 3
    lstm_hidden: int = 64
    lstm_layers: int = 2
    cnn_kernels: tuple = (21, 24, 27, 30)
    cnn_stride: int = 3
    # graph side
    type_dim: int = 3
    gnn_hidden: int = 64
    gat_heads: int = 2
    leaky_slope: float = 0.2
    symmetrize_edges: bool = False
    # fusion head
    head_widths: tuple = (512, 256, 256)
    dropout: float = 0.2

    def __post_init__(self):
        if self.seq_extractor not in SEQ_EXTRACTORS:
            raise ConfigError(f"seq_extractor must be one of {SEQ_EXTRACTORS}, got {self.seq_extractor!r}")
        if self.graph_extractor not in GRAPH_EXTRACTORS:
            raise ConfigError(f"graph_extractor must be one of {GRAPH_EXTRACTORS}, got {self.graph_extractor!r}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.gnn_hidden % self.gat_heads:
            raise ConfigError(f"gnn_hidden={self.gnn_hidden} is not divisible by gat_heads={self.gat_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        flat = self.seq_len * self.token_dim
        for k in self.cnn_kernels:
            if not 0 < k <= flat:
                raise ConfigError(f"cnn kernel {k} does not fit the flattened input width {flat}")

    @property
    def cnn_windows(self):
        flat = self.seq_len * self.token_dim
        return [(flat - k) // self.cnn_stride + 1 for k in self.cnn_kernels]

    @property
    def seq_width(self):
        if self.seq_extractor == "lstm":
            return self.lstm_hidden
        if self.seq_extractor == "cnn":
            return sum(self.cnn_windows)
        return self.seq_out

    @property
    def graph_width(self):
        return 2 * self.gnn_hidden

    @property
    def fused_width(self):
        return self.seq_width + self.graph_width

    def to_text(self):
        return dump_pairs(self)

    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    @classmethod
    def from_text(cls, text):
        return build(cls, parse_pairs(text))


@dataclass(frozen=True)
class RunConfig:
    seq_extractor: str = "transformer"
    graph_extractor: str = "sage"
    dropout: float = 0.2
    symmetrize_edges: bool = False
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 80
    seed: int = 0
    seeds: int = 3
    corpus: str = ""
    out: str = ""

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {self.seeds}")
        self.model_config()

    def model_config(self, **overrides):
        values = dict(seq_extractor=self.seq_extractor, graph_extractor=self.graph_extractor,
                      dropout=self.dropout, symmetrize_edges=self.symmetrize_edges)
        values.update(overrides)
        return ModelConfig(**values)

    def to_text(self):
        return dump_pairs(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------

def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_pairs(obj):
    return "".join(f"{f.name}={_format_value(getattr(obj, f.name))}\n" for f in fields(obj))


def parse_pairs(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def _coerce(name, kind, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for key {name!r}") from None
    return raw


def build(cls, pairs):
    """Instantiate ``cls`` from string pairs; unknown keys raise ConfigError."""
    known = {f.name: f for f in fields(cls)}
    for key in pairs:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    values = {k: _coerce(k, known[k].type, v) for k, v in pairs.items()}
    return cls(**values)


def load_run_config(path=None, overrides=None):
    pairs = parse_pairs(Path(path).read_text(encoding="utf-8")) if path else {}
    pairs.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build(RunConfig, pairs)
