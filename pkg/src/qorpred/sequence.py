"""Optimization-sequence vocabulary, tokenization and learned embeddings."""

import numpy as np

from .errors import ShapeError, TokenError
from .nn import Module
from .tensor import Tensor, add, as_tensor, gather_rows

TOKENS = ("refactor", "refactor-z", "rewrite", "rewrite-z", "resub", "resub-z", "balance")
TOKEN_IDS = {tok: i for i, tok in enumerate(TOKENS)}
VOCAB_SIZE = len(TOKENS)
SEQ_LEN = 20

# tool-style spellings accepted by parse_sequence (never by tokenize)
ALIASES = {
    "refactor -z": "refactor-z",
    "rewrite -z": "rewrite-z",
    "resub -z": "resub-z",
    "rf": "refactor",
    "rfz": "refactor-z",
    "rw": "rewrite",
    "rwz": "rewrite-z",
    "rs": "resub",
    "rsz": "resub-z",
    "b": "balance",
}


def tokenize(names):
    """Canonical token names -> id list. Aliases are rejected here."""
    ids = []
    for pos, name in enumerate(names):
        try:
            ids.append(TOKEN_IDS[name])
        except (KeyError, TypeError):
            raise TokenError(name, pos) from None
    return ids


def detokenize(ids):
    out = []
    for pos, i in enumerate(ids):
        if not 0 <= int(i) < VOCAB_SIZE:
            raise TokenError(i, pos, f"token id {i} at position {pos} outside [0, {VOCAB_SIZE})")
        out.append(TOKENS[int(i)])
    return out


def canonical(name):
    name = " ".join(name.split())
    return ALIASES.get(name, name)


def parse_sequence(text):
    """Parse a sequence string into ids.

    Either whitespace-separated canonical tokens (``rewrite resub-z``) or a
    ``;``-separated tool script (``rewrite; resub -z; balance``), where the
    alias table applies to each command.
    """
    if ";" in text:
        names = [canonical(part) for part in text.split(";") if part.strip()]
    else:
        names = text.split()
    return tokenize(names)


def format_sequence(ids):
    return " ".join(detokenize(ids))


def check_ids(ids):
    ids = np.asarray(ids)
    if ids.size == 0:
        return ids.astype(np.int64)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TokenError(ids.reshape(-1)[0], 0, f"token ids must be integers, got {ids.dtype}")
    flat = ids.reshape(-1)
    bad = np.flatnonzero((flat < 0) | (flat >= VOCAB_SIZE))
    if bad.size:
        pos = int(bad[0]) % ids.shape[-1]
        raise TokenError(int(flat[bad[0]]), pos,
                         f"token id {flat[bad[0]]} at position {pos} outside [0, {VOCAB_SIZE})")
    return ids.astype(np.int64)


def embed(seq, table):
    """Row ``t`` of the output is ``table[seq[t]]``; batched ids give (B, L, d)."""
    return gather_rows(table, check_ids(seq))


def add_positions(x, positions):
    x, positions = as_tensor(x), as_tensor(positions)
    if x.shape[-2:] != positions.shape:
        raise ShapeError(f"token embeddings {x.shape} do not match positions {positions.shape}")
    return add(x, positions)


class EmbeddingTable(Module):
    """Token table (7 x d), plus a learned position table (L x d) if requested.

    Both are initialized uniform in [-1, 1].
    """

    def __init__(self, rng, dim, seq_len=None):
        self.table = Tensor(rng.uniform(-1.0, 1.0, size=(VOCAB_SIZE, dim)), requires_grad=True)
        self.positions = None
        if seq_len is not None:
            self.positions = Tensor(rng.uniform(-1.0, 1.0, size=(seq_len, dim)), requires_grad=True)

    def __call__(self, seq):
        x = embed(seq, self.table)
        if self.positions is not None:
            x = add_positions(x, self.positions)
        return x
