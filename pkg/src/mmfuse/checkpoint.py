"""Versioned binary checkpoints.

Layout (all little-endian):

    bytes 0-3   magic ``MMCK``
    u16         version (currently 1)
    u32         entry count
    per entry:  u16 name length, UTF-8 name, u8 kind,
                kind 0/1 (float32/float64 array): u8 ndim, u32 extents...,
                    raw payload
                kind 2 (JSON blob): u32 byte length, UTF-8 JSON

Entries cover every named parameter tensor, batchnorm running statistics,
optimizer moments and step counts, rng stream states, and a ``meta`` blob
with the epoch counter and seed.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MMCK"
VERSION = 1

_KIND_F32 = 0
_KIND_F64 = 1
_KIND_JSON = 2


def _pack_entry(buf, name, value):
    encoded = name.encode("utf-8")
    buf += struct.pack("<H", len(encoded))
    buf += encoded
    if isinstance(value, np.ndarray):
        kind = _KIND_F32 if value.dtype == np.float32 else _KIND_F64
        dtype = "<f4" if kind == _KIND_F32 else "<f8"
        buf += struct.pack("<BB", kind, value.ndim)
        for extent in value.shape:
            buf += struct.pack("<I", extent)
        buf += np.ascontiguousarray(value, dtype=dtype).tobytes()
    else:
        blob = json.dumps(value, sort_keys=True).encode("utf-8")
        buf += struct.pack("<B", _KIND_JSON)
        buf += struct.pack("<I", len(blob))
        buf += blob


def write_entries(path, entries):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<HI", VERSION, len(entries))
    for name, value in entries.items():
        _pack_entry(buf, name, value)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def read_entries(path):
    with open(path, "rb") as fh:
        raw = fh.read()

    def take(n, offset, what):
        if offset + n > len(raw):
            raise FormatError(f"truncated checkpoint: needed {n} bytes for {what} at byte {offset}")
        return raw[offset : offset + n], offset + n

    chunk, off = take(4, 0, "magic")
    if chunk != MAGIC:
        raise FormatError(f"bad checkpoint magic {chunk!r}")
    chunk, off = take(struct.calcsize("<HI"), off, "header")
    version, count = struct.unpack("<HI", chunk)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")

    entries = {}
    for i in range(count):
        chunk, off = take(2, off, f"name length of entry {i}")
        (name_len,) = struct.unpack("<H", chunk)
        chunk, off = take(name_len, off, f"name of entry {i}")
        name = chunk.decode("utf-8")
        chunk, off = take(1, off, f"kind of entry {i}")
        kind = chunk[0]
        if kind == _KIND_JSON:
            chunk, off = take(4, off, f"length of entry {i}")
            (blob_len,) = struct.unpack("<I", chunk)
            chunk, off = take(blob_len, off, f"payload of entry {i}")
            entries[name] = json.loads(chunk.decode("utf-8"))
        elif kind in (_KIND_F32, _KIND_F64):
            chunk, off = take(1, off, f"rank of entry {i}")
            ndim = chunk[0]
            shape = []
            for _ in range(ndim):
                chunk, off = take(4, off, f"extents of entry {i}")
                shape.append(struct.unpack("<I", chunk)[0])
            dtype = "<f4" if kind == _KIND_F32 else "<f8"
            itemsize = 4 if kind == _KIND_F32 else 8
            n_bytes = itemsize * int(np.prod(shape)) if shape else itemsize
            chunk, off = take(n_bytes, off, f"payload of entry {i}")
            entries[name] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        else:
            raise FormatError(f"unknown entry kind {kind} for {name!r}")
    return entries


def _optimizer_entries(prefix, opt):
    entries = {f"{prefix}.meta": {"step_count": opt.step_count}}
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        entries[f"{prefix}.m.{i}"] = m
        entries[f"{prefix}.v.{i}"] = v
    return entries


def save_checkpoint(path, model, optimizers=None, epoch=0):
    entries = {
        "meta": {"epoch": epoch, "seed": model.seed, "variant": model.config.variant},
    }
    for name, p in model.named_parameters().items():
        entries[f"param.{name}"] = p.data
    for tag, bn in (("bn_text", model.fusion.bn_text), ("bn_image", model.fusion.bn_image)):
        if bn is not None:
            entries[f"running.{tag}.mean"] = bn.running_mean
            entries[f"running.{tag}.var"] = bn.running_var
    if optimizers:
        for name, opt in optimizers.items():
            entries.update(_optimizer_entries(f"opt.{name}", opt))
    entries["rng.sampling"] = {
        "state": {k: str(v) for k, v in model.sample_rng.state()["pcg64"].items()}
    }
    entries["rng.dropout"] = {
        "state": {k: str(v) for k, v in model.dropout_rng.state()["pcg64"].items()}
    }
    write_entries(path, entries)


def load_checkpoint(path, model, optimizers=None):
    """Restore parameters, running stats, optimizer moments, rng streams.

    Returns the stored epoch counter.
    """
    entries = read_entries(path)
    for name, p in model.named_parameters().items():
        p.data[...] = entries[f"param.{name}"]
    for tag, bn in (("bn_text", model.fusion.bn_text), ("bn_image", model.fusion.bn_image)):
        if bn is not None:
            bn.running_mean[...] = entries[f"running.{tag}.mean"]
            bn.running_var[...] = entries[f"running.{tag}.var"]
    if optimizers:
        for name, opt in optimizers.items():
            opt.step_count = entries[f"opt.{name}.meta"]["step_count"]
            for i in range(len(opt.m)):
                opt.m[i][...] = entries[f"opt.{name}.m.{i}"]
                opt.v[i][...] = entries[f"opt.{name}.v.{i}"]
    for attr, key in (("sample_rng", "rng.sampling"), ("dropout_rng", "rng.dropout")):
        rng = getattr(model, attr)
        saved = rng.state()
        saved["pcg64"] = {k: int(v) for k, v in entries[key]["state"].items()}
        rng.restore(saved)
    return entries["meta"]["epoch"]
