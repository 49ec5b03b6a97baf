"""Checkpoint serialization: lossless model round trips in a fixed
binary format.

Layout: magic ``LSNCKPT1``; a 4-byte little-endian unsigned length; that
many bytes of UTF-8 JSON (architecture, class catalog, frozen flags,
per-layer tensor shapes); then every parameter tensor as little-endian
float32, row-major, concatenated in layer order (weights then bias).
The JSON is emitted with sorted keys so identical models produce
identical bytes.
"""

import json
import struct

import numpy as np

from .architecture import ArchConfig
from .data import ClassCatalog
from .exceptions import CheckpointError, LesionCnnError
from .model import ModelState, param_shapes

MAGIC = b"LSNCKPT1"


def save_checkpoint(model, path):
    header = {
        "format": 1,
        "config": model.config.to_dict(),
        "classes": list(model.classes.codes),
        "frozen": list(model.frozen),
        "init_seed": model.init_seed,
        "tensors": [
            {"weights": list(w.shape), "bias": list(b.shape)} for w, b in model.params
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)
        for w, b in model.params:
            handle.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            handle.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_checkpoint(path):
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise CheckpointError("cannot read checkpoint %s: %s" % (path, exc)) from exc
    if len(data) < len(MAGIC) + 4:
        raise CheckpointError("checkpoint %s is truncated before the header" % (path,))
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("checkpoint %s has a bad magic value" % (path,))
    (header_len,) = struct.unpack_from("<I", data, len(MAGIC))
    header_start = len(MAGIC) + 4
    if len(data) < header_start + header_len:
        raise CheckpointError("checkpoint %s is truncated inside the header" % (path,))
    try:
        header = json.loads(data[header_start:header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("checkpoint %s header is not valid JSON: %s" % (path, exc)) from exc
    try:
        config = ArchConfig.from_dict(header["config"])
        classes = ClassCatalog(tuple(header["classes"]))
        frozen = tuple(bool(f) for f in header["frozen"])
        init_seed = int(header["init_seed"])
        declared = [
            (tuple(t["weights"]), tuple(t["bias"])) for t in header["tensors"]
        ]
    except (KeyError, TypeError, LesionCnnError) as exc:
        raise CheckpointError("checkpoint %s header is malformed: %s" % (path, exc)) from exc
    expected = param_shapes(config)
    if declared != expected:
        raise CheckpointError(
            "checkpoint %s tensor shapes %r do not match its architecture %r"
            % (path, declared, expected)
        )
    offset = header_start + header_len
    params = []
    for wshape, bshape in expected:
        pair = []
        for shape in (wshape, bshape):
            count = int(np.prod(shape))
            nbytes = count * 4
            if len(data) < offset + nbytes:
                raise CheckpointError("checkpoint %s is truncated inside the payload" % (path,))
            tensor = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
            pair.append(tensor.reshape(shape).copy())
            offset += nbytes
        params.append(tuple(pair))
    if offset != len(data):
        raise CheckpointError(
            "checkpoint %s has %d trailing bytes" % (path, len(data) - offset)
        )
    try:
        return ModelState(
            config=config,
            params=tuple(params),
            frozen=frozen,
            init_seed=init_seed,
            classes=classes,
        )
    except LesionCnnError as exc:
        raise CheckpointError("checkpoint %s is inconsistent: %s" % (path, exc)) from exc
