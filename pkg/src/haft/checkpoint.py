"""Checkpoint archive: a directory with manifest.json plus one little-endian
raw binary per named array. Payload hashes are verified on load; arrays
flagged train_only (discriminator, optimizer state) can be skipped for
deployment with strict=False."""

import hashlib
import json
import os

import numpy as np

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "int32": "<i4"}


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_checkpoint(path, arrays, train_only=(), meta=None):
    """Write named numpy arrays plus a JSON manifest.

    arrays: dict name -> np.ndarray; train_only: set of names excluded from
    deployment loads; meta: JSON-serializable extras (config, iteration).
    """
    os.makedirs(path, exist_ok=True)
    entries = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError("unsupported dtype %s for array %s" % (dtype, name))
        payload = arr.astype(_DTYPES[dtype]).tobytes()
        fname = name.replace("/", "_") + ".bin"
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(payload)
        entries.append({
            "name": name,
            "file": fname,
            "shape": list(arr.shape),
            "dtype": dtype,
            "sha256": hashlib.sha256(payload).hexdigest(),
            "train_only": name in train_only,
        })
    manifest = {"arrays": entries, "meta": meta or {}}
    manifest["hash"] = hashlib.sha256(_canonical(manifest)).hexdigest()
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(path, strict=True):
    """Read a checkpoint archive back into (arrays, meta). With strict=False
    the train_only arrays are skipped."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    recorded = manifest.pop("hash", None)
    if recorded != hashlib.sha256(_canonical(manifest)).hexdigest():
        raise ValueError("manifest hash mismatch in %s" % path)

    arrays = {}
    for entry in manifest["arrays"]:
        if entry["train_only"] and not strict:
            continue
        with open(os.path.join(path, entry["file"]), "rb") as fh:
            payload = fh.read()
        if hashlib.sha256(payload).hexdigest() != entry["sha256"]:
            raise ValueError("payload hash mismatch for array '%s'" % entry["name"])
        arr = np.frombuffer(payload, dtype=_DTYPES[entry["dtype"]])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return arrays, manifest["meta"]
