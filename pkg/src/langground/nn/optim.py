"""Parameter storage and the RMSProp update.

All parameters live in one flat float32 block so a worker can snapshot the
shared store with a single copy and the optimizer can run as flat
elementwise passes.  The shared store is updated lock-free from many
workers: readers may observe torn/stale mixtures of updates, which is the
accepted contract of asynchronous training.  Correctness-sensitive runs use
a single worker.
"""

from __future__ import annotations

import numpy as np


class ParamStore:
    """Named parameter tensors over one flat buffer, plus RMSProp state."""

    def __init__(self, specs, dtype=np.float32, params_buf=None, ms_buf=None):
        self.specs = []
        self.offsets = {}
        total = 0
        for name, shape in specs:
            if name in self.offsets:
                raise ValueError(f"duplicate parameter name {name!r}")
            shape = tuple(shape)
            self.offsets[name] = (total, shape)
            self.specs.append((name, shape))
            total += int(np.prod(shape))
        self.size = total
        self.dtype = np.dtype(dtype)
        self.params = self._buffer(params_buf)
        self.ms = self._buffer(ms_buf)
        self.momentum_buf = None
        self.step_count = np.zeros(1, dtype=np.int64)

    def _buffer(self, buf):
        if buf is None:
            return np.zeros(self.size, dtype=self.dtype)
        arr = np.frombuffer(buf, dtype=self.dtype, count=self.size) \
            if not isinstance(buf, np.ndarray) else buf
        if arr.size != self.size:
            raise ValueError("backing buffer has wrong size")
        return arr

    def view(self, name: str) -> np.ndarray:
        off, shape = self.offsets[name]
        return self.params[off:off + int(np.prod(shape))].reshape(shape)

    def names(self):
        return [n for n, _ in self.specs]

    def copy_into(self, dst_flat: np.ndarray):
        np.copyto(dst_flat, self.params)

    def load_flat(self, src_flat: np.ndarray):
        np.copyto(self.params, src_flat)


def clip_global_norm(grads: np.ndarray, max_norm: float = 100.0):
    """Scale the flat gradient block so its global L2 norm is at most
    max_norm.  Returns (grads, pre_clip_norm); scaling is in place."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > max_norm:
        grads *= max_norm / norm
    return grads, norm


_SCRATCH = {}


def _scratch_like(arr: np.ndarray) -> np.ndarray:
    key = (arr.size, arr.dtype.str)
    buf = _SCRATCH.get(key)
    if buf is None:
        buf = np.empty(arr.size, dtype=arr.dtype)
        _SCRATCH[key] = buf
    return buf


def rmsprop_update(store: ParamStore, grads: np.ndarray, lr: float,
                   decay: float = 0.99, eps: float = 0.1,
                   momentum: float = 0.0):
    """acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/sqrt(acc + eps).

    eps sits inside the square root.  All passes run in place over the flat
    blocks (no temporaries); the momentum buffer is only allocated when
    momentum is nonzero.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    ms = store.ms
    scratch = _scratch_like(grads)
    np.multiply(grads, grads, out=scratch)
    scratch *= (1.0 - decay)
    ms *= decay
    ms += scratch
    np.add(ms, eps, out=scratch)
    np.sqrt(scratch, out=scratch)
    np.divide(grads, scratch, out=scratch)
    if momentum > 0.0:
        if store.momentum_buf is None:
            store.momentum_buf = np.zeros_like(store.params)
        buf = store.momentum_buf
        buf *= momentum
        scratch *= lr
        buf += scratch
        store.params -= buf
    else:
        scratch *= lr
        store.params -= scratch
    store.step_count += 1


def fan_in_uniform(rng, shape, fan_in: int, dtype=np.float32):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
