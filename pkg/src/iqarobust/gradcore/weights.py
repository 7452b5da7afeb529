"""Weight files: a JSON manifest plus a little-endian float64 blob.

Manifest layout::

    {
      "format": "iqarobust-weights/1",
      "blob": "tiny-cnn-nr.bin",
      "layers": [
        {"name": "c1.w", "kind": "conv2d.weight", "shape": [3, 3, 3, 8],
         "initializer": "he_normal(seed=11)"},
        ...
      ]
    }

Parameters are stored in manifest order, each flattened row-major.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "iqarobust-weights/1"


class WeightFileError(ValueError):
    pass


def save_weights(manifest_path, layers, arrays, extra=None):
    """Write ``arrays`` (name -> array) in the order given by ``layers``.

    ``layers`` is a list of dicts with at least ``name``, ``kind`` and
    ``initializer``; shapes are filled in from the arrays.
    """
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    entries = []
    chunks = []
    for layer in layers:
        arr = np.asarray(arrays[layer["name"]], dtype="<f8")
        entries.append({**layer, "shape": list(arr.shape)})
        chunks.append(arr.ravel(order="C").tobytes())
    manifest = {"format": FORMAT, "blob": blob_path.name, "layers": entries}
    if extra:
        manifest["extra"] = extra
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path


def load_weights(manifest_path):
    """Return ``(arrays, manifest)``; arrays are read-only float64."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise WeightFileError(f"{manifest_path}: unsupported format {manifest.get('format')!r}")
    raw = (manifest_path.parent / manifest["blob"]).read_bytes()
    expected = sum(int(np.prod(layer["shape"], dtype=np.int64)) for layer in manifest["layers"]) * 8
    if len(raw) != expected:
        raise WeightFileError(
            f"{manifest_path}: blob holds {len(raw)} bytes, manifest expects {expected}"
        )
    flat = np.frombuffer(raw, dtype="<f8")
    arrays = {}
    offset = 0
    for layer in manifest["layers"]:
        n = int(np.prod(layer["shape"], dtype=np.int64))
        arr = flat[offset:offset + n].reshape(layer["shape"]).astype(np.float64)
        arr.setflags(write=False)
        if not np.all(np.isfinite(arr)):
            raise WeightFileError(f"{manifest_path}: layer {layer['name']} has non-finite values")
        arrays[layer["name"]] = arr
        offset += n
    return arrays, manifest
