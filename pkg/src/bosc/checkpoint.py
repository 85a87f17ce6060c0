"""Binary checkpoint format.

    b"BOSC" | version (1 byte) | header length (uint32 LE) | JSON header |
    float32 LE parameter arrays in header order

The header carries the layer descriptors, input shape, number of in-set
classes, normalisation statistics, tainting strength and the SHA-256 digest
of the trigger set the model was trained with.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormStats
from .nn import Model

MAGIC = b"BOSC"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Classifier:
    """A trained network together with everything inference needs."""

    model: Model
    stats: NormStats
    num_classes: int
    alpha: float = 0.1
    mode: str = "bosc"
    trigger_digest: str = ""

    def logits(self, images, batch_size=256):
        from .nn import forward

        images = np.asarray(images, dtype=np.float32)
        if len(images) == 0:
            return np.zeros((0, self.model.num_outputs), dtype=self.model.dtype)
        return np.concatenate([forward(self.model, self.stats.normalize(images[i:i + batch_size]))
                               for i in range(0, len(images), batch_size)])

    def check_triggers(self, triggers):
        if self.mode == "bosc" and triggers.digest() != self.trigger_digest:
            raise CheckpointError("trigger set does not match the one this checkpoint was trained with")
        if len(triggers) != self.num_classes:
            raise CheckpointError(f"checkpoint has {self.num_classes} classes but {len(triggers)} triggers given")


def to_bytes(clf: Classifier) -> bytes:
    arrays = clf.model.param_arrays()
    header = {
        "layers": clf.model.layers,
        "input_shape": list(clf.model.input_shape),
        "num_outputs": clf.model.num_outputs,
        "num_classes": clf.num_classes,
        "alpha": clf.alpha,
        "mode": clf.mode,
        "trigger_digest": clf.trigger_digest,
        "mean": [float(v) for v in clf.stats.mean],
        "std": [float(v) for v in clf.stats.std],
        "params": [{"layer": i, "name": name, "shape": list(a.shape)} for i, name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for _, _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return buf.getvalue()


def from_bytes(raw: bytes) -> Classifier:
    if raw[:4] != MAGIC:
        raise CheckpointError("not a BOSC checkpoint (bad magic)")
    if raw[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {raw[4]}")
    (n,) = struct.unpack("<I", raw[5:9])
    try:
        header = json.loads(raw[9:9 + n])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    offset = 9 + n
    params = [dict() for _ in header["layers"]]
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError("checkpoint truncated")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(entry["shape"]).astype(np.float32)
        params[entry["layer"]][entry["name"]] = arr
        offset = end
    if offset != len(raw):
        raise CheckpointError("trailing bytes after parameter data")
    model = Model(header["layers"], params, tuple(header["input_shape"]), header["num_outputs"])
    stats = NormStats(np.asarray(header["mean"], np.float32), np.asarray(header["std"], np.float32))
    return Classifier(model, stats, header["num_classes"], header["alpha"], header["mode"],
                      header["trigger_digest"])


def save(clf: Classifier, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(clf))
    return path


def load(path) -> Classifier:
    return from_bytes(Path(path).read_bytes())
