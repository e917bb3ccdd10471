"""Atomic, content-addressed persistence for datasets, chains and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "read_json",
    "save_array",
    "load_array",
    "sha256_file",
    "ManifestError",
    "write_manifest",
    "verify_manifest",
    "write_chain",
    "read_chain_csv",
]


class ManifestError(RuntimeError):
    """A file listed in a manifest is missing or its content changed."""


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_array(path, arr) -> str:
    """Write ``arr`` as .npy (no pickle) and return its sha256."""
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    data = buf.getvalue()
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_array(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path, files: dict[str, str], info: dict) -> dict:
    """Manifest listing ``name -> relative path`` with content hashes.

    ``id`` hashes the canonical JSON of the hashed entries and ``info``;
    timings belong elsewhere so that replays reproduce it exactly.
    """
    root = Path(path).parent
    entries = {name: {"path": rel, "sha256": sha256_file(root / rel)} for name, rel in sorted(files.items())}
    body = {"files": entries, "info": info}
    body["id"] = hashlib.sha256(dumps(body).encode()).hexdigest()
    write_json(path, body)
    return body


def verify_manifest(path) -> dict:
    """Reload a manifest and check every file hash; raise :class:`ManifestError` on mismatch."""
    body = read_json(path)
    root = Path(path).parent
    for name, e in body["files"].items():
        f = root / e["path"]
        if not f.exists():
            raise ManifestError(f"{name}: missing file {f}")
        if sha256_file(f) != e["sha256"]:
            raise ManifestError(f"{name}: content of {f} does not match the manifest hash")
    check = {"files": body["files"], "info": body["info"]}
    if hashlib.sha256(dumps(check).encode()).hexdigest() != body.get("id"):
        raise ManifestError("manifest id does not match its content")
    return body


def write_chain(path, samples, log_likelihoods, accepted, sidecar: dict) -> None:
    """Chain CSV (``iter, theta_0.., log_like, accepted``) plus a JSON sidecar."""
    samples = np.atleast_2d(np.asarray(samples, float))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", *[f"theta_{i}" for i in range(samples.shape[1])], "log_like", "accepted"])
    for k, (row, ll, acc) in enumerate(zip(samples, log_likelihoods, accepted)):
        w.writerow([k, *[repr(float(x)) for x in row], repr(float(ll)), int(bool(acc))])
    atomic_write_text(path, buf.getvalue())
    write_json(str(path) + ".json", sidecar)


def read_chain_csv(path):
    """Return ``(samples, log_likelihoods, accepted)`` from a chain CSV."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    return data[:, 1:-2], data[:, -2], data[:, -1].astype(bool)
