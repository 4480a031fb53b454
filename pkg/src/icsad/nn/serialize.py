"""Binary model container.

Layout::

    b"ICSADMDL"                 8-byte magic
    uint32 LE                   header length in bytes
    header                      UTF-8 JSON: format version, model config,
                                tensor manifest, Adam step, metadata
    float64 LE payload          tensors in manifest order: parameters,
                                buffers, Adam first moments, Adam second moments
"""
import json
import struct

import numpy as np

from ..errors import ModelLoadError
from .model import AdamState, ModelConfig, build_model

MAGIC = b"ICSADMDL"
FORMAT_VERSION = "1.0"
_LE_F8 = np.dtype("<f8")


def _manifest(model):
    sections = [
        ("param", model.params),
        ("buffer", model.buffers),
        ("adam_m", model.adam.m),
        ("adam_v", model.adam.v),
    ]
    return [(sec, name, arr) for sec, tensors in sections for name, arr in tensors.items()]


def save_model(model, path):
    entries = _manifest(model)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "adam_t": model.adam.t,
        "tensors": [{"section": s, "name": n, "shape": list(a.shape)} for s, n, a in entries],
        "metadata": model.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F8).tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ModelLoadError(f"{path}: not an icsad model file (bad magic bytes)")
    if len(raw) < 12:
        raise ModelLoadError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise ModelLoadError(f"{path}: truncated header ({len(raw) - 12} of {hlen} bytes)")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"{path}: corrupt header: {exc}") from None
    version = str(header.get("format_version", "?"))
    major = version.split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise ModelLoadError(f"{path}: unsupported format version {version} (this build reads {FORMAT_VERSION})")

    model = build_model(ModelConfig.from_dict(header["model_config"]))
    expected = {(s, n): tuple(a.shape) for s, n, a in _manifest(model)}
    offset = 12 + hlen
    adam = AdamState(t=int(header["adam_t"]))
    for entry in header["tensors"]:
        key = (entry["section"], entry["name"])
        shape = tuple(entry["shape"])
        if expected.get(key) != shape:
            raise ModelLoadError(f"{path}: tensor {key} has shape {shape}, config implies {expected.get(key)}")
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise ModelLoadError(f"{path}: truncated payload at tensor {entry['name']!r}")
        arr = np.frombuffer(raw[offset:end], dtype=_LE_F8).astype(np.float64).reshape(shape)
        offset = end
        section, name = key
        if section == "param":
            model.set_param(name, arr)
        elif section == "buffer":
            model.set_buffer(name, arr)
        elif section == "adam_m":
            adam.m[name] = arr
        else:
            adam.v[name] = arr
    if offset != len(raw):
        raise ModelLoadError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    if len(header["tensors"]) != len(expected):
        raise ModelLoadError(f"{path}: manifest lists {len(header['tensors'])} tensors, expected {len(expected)}")
    model.adam = adam
    model.metadata = header.get("metadata", {})
    return model
