import struct

import numpy as np
import pytest

from qorpred.bundle import MAGIC, bundle_bytes, load_bundle, parse_bundle, save_bundle
from qorpred.config import ModelConfig
from qorpred.errors import BundleFormatError, FingerprintMismatchError
from qorpred.model import JointModel, ModelBundle, predict
from qorpred.rng import make_rng


@pytest.fixture(params=["transformer", "lstm", "cnn"])
def bundle(request):
    cfg = ModelConfig(seq_extractor=request.param, graph_extractor="gat")
    model = JointModel(make_rng(3), cfg).eval()
    model.graph.bn1.running_mean = np.linspace(0, 1, 64)
    return ModelBundle(cfg, model, 42.5, 6.25, 17)


def test_round_trip_predictions(tmp_path, bundle, golden):
    path = tmp_path / "m.qorf"
    save_bundle(bundle, path)
    loaded = load_bundle(path)
    assert (loaded.label_mean, loaded.label_std, loaded.seed) == (42.5, 6.25, 17)
    assert loaded.config == bundle.config
    seq = np.arange(20) % 7
    assert abs(predict(loaded, golden, seq) - predict(bundle, golden, seq)) <= 1e-12
    assert bundle_bytes(loaded) == path.read_bytes()


def test_bytes_are_deterministic():
    cfg = ModelConfig()
    a = ModelBundle(cfg, JointModel(make_rng(1), cfg), 1.0, 2.0, 1)
    b = ModelBundle(cfg, JointModel(make_rng(1), cfg), 1.0, 2.0, 1)
    assert bundle_bytes(a) == bundle_bytes(b)


def test_bad_magic(bundle):
    data = bytearray(bundle_bytes(bundle))
    data[:4] = b"XXXX"
    with pytest.raises(BundleFormatError, match="magic"):
        parse_bundle(bytes(data))


def test_truncated_and_trailing(bundle):
    data = bundle_bytes(bundle)
    with pytest.raises(BundleFormatError, match="truncated"):
        parse_bundle(data[:-3])
    with pytest.raises(BundleFormatError, match="trailing"):
        parse_bundle(data + b"\0")


def test_version_and_fingerprint_checked(bundle):
    data = bytearray(bundle_bytes(bundle))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(BundleFormatError, match="version"):
        parse_bundle(bytes(data))
    data = bytearray(bundle_bytes(bundle))
    data[10] ^= 0xFF
    with pytest.raises(BundleFormatError, match="fingerprint"):
        parse_bundle(bytes(data))


def test_different_config_rejected(bundle):
    other = ModelConfig(seq_extractor=bundle.config.seq_extractor, graph_extractor="gcn")
    with pytest.raises(FingerprintMismatchError):
        parse_bundle(bundle_bytes(bundle), expected_config=other)
    assert parse_bundle(bundle_bytes(bundle), expected_config=bundle.config).config == bundle.config


def test_header_layout(bundle):
    data = bundle_bytes(bundle)
    assert data[:4] == MAGIC and struct.unpack("<I", data[4:8]) == (1,)
    assert data[8:40] == bundle.config.fingerprint()
