import json

import numpy as np
import pytest

from iqarobust.gradcore import WeightFileError, load_weights, save_weights


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.standard_normal((3, 3, 2, 4)), "b": rng.standard_normal(4)}
    layers = [{"name": "a", "kind": "conv2d.weight", "initializer": "normal"},
              {"name": "b", "kind": "conv2d.bias", "initializer": "zeros"}]
    path = save_weights(tmp_path / "m.json", layers, arrays)
    loaded, manifest = load_weights(path)
    assert [layer["name"] for layer in manifest["layers"]] == ["a", "b"]
    for name in arrays:
        assert loaded[name].tobytes() == arrays[name].tobytes()
        assert not loaded[name].flags.writeable
    # blob is little-endian float64 in manifest order
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw == arrays["a"].astype("<f8").tobytes() + arrays["b"].astype("<f8").tobytes()


def test_truncated_blob_is_rejected(tmp_path):
    path = save_weights(tmp_path / "m.json", [{"name": "a", "kind": "x", "initializer": "y"}],
                        {"a": np.ones(5)})
    (tmp_path / "m.bin").write_bytes(b"\0" * 32)
    with pytest.raises(WeightFileError, match="expects 40"):
        load_weights(path)


def test_unknown_format_is_rejected(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"format": "other", "layers": []}))
    with pytest.raises(WeightFileError):
        load_weights(tmp_path / "m.json")
