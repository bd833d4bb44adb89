"""Versioned checkpoint container with a deterministic byte layout.

Layout (little-endian):

    bytes 0..7   magic b"LDCKPT01"
    bytes 8..11  uint32 header length H
    bytes 12..   header: canonical JSON (sorted keys, no whitespace), UTF-8
    then         raw tensor payloads, concatenated in header order

The header carries: kind ("vae" | "gan"), config echo, seed, vocab hash,
optional vae checkpoint hash (for GAN checkpoints), free-form meta, and a
tensor index of (name, shape, dtype, offset, nbytes). The same config and
seed always produce byte-identical files, so a checkpoint's SHA-256 is a
stable identity.
"""

import hashlib
import json

import numpy as np

MAGIC = b"LDCKPT01"


class CheckpointError(ValueError):
    pass


class Checkpoint:
    def __init__(self, kind, config, tensors, seed=None, vocab_sha256=None,
                 vae_sha256=None, meta=None):
        self.kind = kind
        self.config = config
        self.tensors = tensors
        self.seed = seed
        self.vocab_sha256 = vocab_sha256
        self.vae_sha256 = vae_sha256
        self.meta = meta or {}


def save_checkpoint(path, ckpt):
    index = []
    payloads = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype=np.float64)
        raw = arr.tobytes()
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "float64",
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "seed": ckpt.seed,
        "vocab_sha256": ckpt.vocab_sha256,
        "vae_sha256": ckpt.vae_sha256,
        "meta": ckpt.meta,
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    hlen = int(np.frombuffer(data[8:12], dtype=np.uint32)[0])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = data[start:start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        tensors=tensors,
        seed=header.get("seed"),
        vocab_sha256=header.get("vocab_sha256"),
        vae_sha256=header.get("vae_sha256"),
        meta=header.get("meta", {}),
    )


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
