"""Predict post-synthesis AIG node counts from circuits and optimization sequences."""

from .bundle import load_bundle, save_bundle
from .circuit import AigGraph, load_graph, parse_graph
from .config import ModelConfig, RunConfig
from .corpus import Corpus, DatasetRecord, load_corpus
from .datagen import SynthSpec, gen_corpus, synthetic_qor
from .model import JointModel, evaluate, predict, split_dataset, train
from .sequence import parse_sequence, tokenize

__version__ = "0.1.0"

__all__ = [
    "AigGraph", "Corpus", "DatasetRecord", "JointModel", "ModelConfig", "RunConfig", "SynthSpec",
    "evaluate", "gen_corpus", "load_bundle", "load_corpus", "load_graph", "parse_graph",
    "parse_sequence", "predict", "save_bundle", "split_dataset", "synthetic_qor", "tokenize", "train",
]
