"""Self-describing, checksummed checkpoint archive.

Layout::

    b"DLSMCKPT" | u32 format version | u64 header length | JSON header | array bytes | sha256

The header lists every array (name, dtype, shape, offset). Nothing in the file
depends on wall-clock time, so identical runs produce identical bytes.
"""

import hashlib
import json
import struct
import warnings

import numpy as np

from .config import ModelConfig
from .errors import ChecksumError, IncompatibleCheckpointError
from .trainer import TrainedModel

MAGIC = b"DLSMCKPT"
FORMAT_VERSION = 1


def _pack_arrays(groups):
    index = []
    chunks = []
    offset = 0
    for group, arrays in groups.items():
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name])
            raw = arr.tobytes()
            index.append({"name": f"{group}/{name}", "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    return index, b"".join(chunks)


def save_checkpoint(model, path):
    groups = {"state": model.state, "posterior": model.posterior, "split": model.split}
    index, payload = _pack_arrays(groups)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "config_hash": model.config_hash,
        "n": model.n,
        "in_dim": model.in_dim,
        "labels": list(model.labels),
        "history": model.history,
        "best_epoch": model.best_epoch,
        "best_val_auc": model.best_val_auc,
        "meta": model.meta,
        "arrays": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + payload
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())
    return path


def load_checkpoint(path, expected_config_hash=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ChecksumError: the file is truncated or corrupted.
        IncompatibleCheckpointError: wrong magic or unsupported format version.

    A :class:`UserWarning` is issued when ``expected_config_hash`` differs from
    the stored hash.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 12 + 32:
        raise ChecksumError(f"{path}: file too short")
    if blob[: len(MAGIC)] != MAGIC:
        raise IncompatibleCheckpointError(f"{path}: not a DLSM checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, hlen = struct.unpack("<IQ", body[len(MAGIC) : len(MAGIC) + 12])
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = len(MAGIC) + 12
    header = json.loads(body[start : start + hlen].decode("utf-8"))
    payload = body[start + hlen :]
    groups = {"state": {}, "posterior": {}, "split": {}}
    for entry in header["arrays"]:
        group, name = entry["name"].split("/", 1)
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        groups[group][name] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    config = ModelConfig.from_dict(header["config"])
    if expected_config_hash is not None and expected_config_hash != header["config_hash"]:
        warnings.warn(f"checkpoint config hash {header['config_hash']} differs from expected {expected_config_hash}", UserWarning, stacklevel=2)
    return TrainedModel(
        config=config,
        state=groups["state"],
        posterior=groups["posterior"],
        history=header["history"],
        n=header["n"],
        labels=header["labels"],
        split=groups["split"],
        in_dim=header["in_dim"],
        best_epoch=header["best_epoch"],
        best_val_auc=header["best_val_auc"],
        meta=header["meta"],
    )


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
