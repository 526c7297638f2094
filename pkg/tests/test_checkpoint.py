import numpy as np
import pytest

from langground import checkpoint as ckpt
from langground.agent import AgentConfig, init_params, param_specs
from langground.nn.optim import ParamStore


def _store(vocab_words=10, seed=0, embed_init=0.75):
    cfg = AgentConfig(vocab_words=vocab_words)
    store = ParamStore(param_specs(cfg))
    init_params(store, cfg, seed, embed_init)
    return cfg, store


def test_save_load_roundtrip_bytes(tmp_path):
    _, store = _store()
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    ckpt.save(p1, store, meta={"encoder": "bow", "vocab": ["a", "b"]})
    cfg2, store2 = _store(seed=5)
    ckpt.load_into(store2, p1)
    ckpt.save(p2, store2, meta={"encoder": "bow", "vocab": ["a", "b"]})
    assert p1.read_bytes() == p2.read_bytes()


def test_load_restores_exact_values(tmp_path):
    _, store = _store(seed=3)
    path = tmp_path / "c.ckpt"
    ckpt.save(path, store)
    _, other = _store(seed=9)
    assert not np.array_equal(other.params, store.params)
    ckpt.load_into(other, path)
    assert np.array_equal(other.params, store.params)


def test_magic_header_checked(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    _, store = _store()
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_into(store, path)


def test_meta_roundtrip(tmp_path):
    _, store = _store()
    path = tmp_path / "m.ckpt"
    ckpt.save(path, store, meta={"encoder": "lstm", "vocab": ["x", "y", "z"],
                                 "version": "0.1.0"})
    _, meta, _ = ckpt.read(path)
    assert meta["encoder"] == "lstm"
    assert meta["vocab"] == "x,y,z"


def test_shape_mismatch_rejected(tmp_path):
    _, store = _store(vocab_words=10)
    path = tmp_path / "v.ckpt"
    ckpt.save(path, store)   # no vocab meta: remap impossible
    cfg2 = AgentConfig(vocab_words=12)
    other = ParamStore(param_specs(cfg2))
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_into(other, path, vocab_words=["w%d" % i for i in range(12)])


def test_vocab_remap_by_word(tmp_path):
    # pretraining vocabulary is a superset; rows move to the new indices
    big_words = ["alpha", "beta", "gamma", "delta"]
    cfg, store = _store(vocab_words=4, seed=1)
    table = store.view("embed.T")
    marker = np.arange(4, dtype=np.float32)[:, None]
    table[:4] = marker           # row i filled with value i
    table[4] = 100.0             # pad row
    table[5] = 200.0             # unk row
    path = tmp_path / "pre.ckpt"
    ckpt.save(path, store, meta={"vocab": big_words})

    small_words = ["delta", "beta"]
    cfg2 = AgentConfig(vocab_words=2)
    other = ParamStore(param_specs(cfg2))
    ckpt.load_into(other, path, vocab_words=small_words)
    t2 = other.view("embed.T")
    assert np.allclose(t2[0], 3.0)    # delta row
    assert np.allclose(t2[1], 1.0)    # beta row
    assert np.allclose(t2[2], 100.0)  # pad carried over
    assert np.allclose(t2[3], 200.0)  # unk carried over


def test_vocab_missing_word_rejected(tmp_path):
    cfg, store = _store(vocab_words=2, seed=1)
    path = tmp_path / "pre.ckpt"
    ckpt.save(path, store, meta={"vocab": ["a", "b"]})
    cfg2 = AgentConfig(vocab_words=2)
    other = ParamStore(param_specs(cfg2))
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_into(other, path, vocab_words=["a", "zzz"])


def test_little_endian_on_disk(tmp_path):
    _, store = _store()
    store.view("conv1.b")[0] = 1.5
    path = tmp_path / "le.ckpt"
    ckpt.save(path, store)
    specs, meta, flat = ckpt.read(path)
    names = [n for n, _ in specs]
    # recover conv1.b's offset and check raw bytes decode as little-endian
    off = 0
    for n, s in specs:
        if n == "conv1.b":
            break
        off += int(np.prod(s))
    assert flat[off] == np.float32(1.5)
    raw = path.read_bytes()
    header = 16 + int.from_bytes(raw[8:16], "little")
    val = np.frombuffer(raw[header + off * 4: header + off * 4 + 4], "<f4")[0]
    assert val == np.float32(1.5)
