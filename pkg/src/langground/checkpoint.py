"""Checkpoint format: named tensors as little-endian 32-bit floats behind a
text manifest (name, shape, byte offset) and a versioned magic header.

Layout: MAGIC (8 bytes) | manifest length (8-byte LE unsigned) | manifest
utf-8 | raw tensor data.  Manifest meta lines carry the encoder mode and
the vocabulary so embedding rows can be remapped by word on load.
"""

from __future__ import annotations

import numpy as np

MAGIC = b"LGCKPT01"


class CheckpointError(ValueError):
    pass


def save(path, store, meta: dict | None = None):
    """Write every tensor of ``store`` (float32, little-endian)."""
    meta = dict(meta or {})
    lines = []
    for key in sorted(meta):
        value = meta[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"#meta {key}={value}")
    offset = 0
    for name, shape in store.specs:
        n = int(np.prod(shape))
        shape_txt = "x".join(str(s) for s in shape)
        lines.append(f"{name} {shape_txt} {offset}")
        offset += n * 4
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    data = store.params.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        fh.write(data.tobytes())


def read(path):
    """Returns (specs, meta, flat float32 data in manifest order)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; expected {MAGIC!r}")
        mlen = int.from_bytes(fh.read(8), "little")
        manifest = fh.read(mlen).decode("utf-8")
        blob = fh.read()
    meta = {}
    specs = []
    offsets = []
    for line in manifest.splitlines():
        if not line.strip():
            continue
        if line.startswith("#meta "):
            key, _, value = line[len("#meta "):].partition("=")
            meta[key] = value
            continue
        name, shape_txt, off = line.split()
        shape = tuple(int(s) for s in shape_txt.split("x")) if shape_txt else ()
        specs.append((name, shape))
        offsets.append(int(off))
    total = sum(int(np.prod(s)) for _, s in specs)
    flat = np.frombuffer(blob, dtype="<f4", count=total).astype(np.float32)
    return specs, meta, flat


def load_into(store, path, vocab_words=None):
    """Load a checkpoint into ``store``.

    When the checkpoint vocabulary differs from ``vocab_words``, embedding
    rows are remapped by word; every current word must exist in the
    checkpoint (its vocabulary must be a superset).  All other tensors must
    match shapes exactly.
    """
    specs, meta, flat = read(path)
    by_name = {}
    off = 0
    for name, shape in specs:
        n = int(np.prod(shape))
        by_name[name] = (shape, flat[off:off + n])
        off += n
    ckpt_vocab = meta.get("vocab", "").split(",") if meta.get("vocab") else None

    for name, shape in store.specs:
        if name not in by_name:
            raise CheckpointError(f"checkpoint lacks tensor {name!r}")
        cshape, cdata = by_name[name]
        view = store.view(name)
        vocab_differs = (ckpt_vocab is not None and vocab_words is not None
                         and list(vocab_words) != list(ckpt_vocab))
        if name == "embed.T" and (cshape != shape or vocab_differs):
            if ckpt_vocab is None or vocab_words is None:
                raise CheckpointError(
                    "embedding shape differs and no vocabulary to remap by")
            index = {w: i for i, w in enumerate(ckpt_vocab)}
            missing = [w for w in vocab_words if w not in index]
            if missing:
                raise CheckpointError(
                    f"checkpoint vocabulary lacks words {missing[:5]} "
                    "(must be a superset of the current vocabulary)")
            table = cdata.reshape(cshape)
            for row, word in enumerate(vocab_words):
                view[row] = table[index[word]]
            # pad and unk rows sit after the words on both sides
            view[len(vocab_words)] = table[len(ckpt_vocab)]
            view[len(vocab_words) + 1] = table[len(ckpt_vocab) + 1]
            continue
        if cshape != shape:
            raise CheckpointError(
                f"architecture mismatch for {name!r}: checkpoint {cshape}, "
                f"store {shape}")
        view[:] = cdata.reshape(shape)
    return meta
