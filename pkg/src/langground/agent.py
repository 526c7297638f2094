"""The agent network: vision, language, mixing and action modules plus
policy/value heads and the auxiliary-network parameters.

Two code paths share the same parameter storage and raw numeric helpers:
a no-gradient fast path used while acting, and tape-building functions used
by the update pass.  Two weight ties hold by storage identity: the word
prediction output layer is the embedding table, and the temporal-prediction
action embedding is the policy head's weight matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ops
from .nn.optim import ParamStore, fan_in_uniform
from .nn.tensor import Tensor
from .world import NUM_ACTIONS

VISION_CHANNELS = ((3, 32, 8, 4), (32, 64, 4, 2), (64, 64, 3, 1))
VISION_OUT_SHAPE = (64, 7, 7)
VISION_FLAT = 64 * 7 * 7                  # 3136
EMBED_DIM = 128
CORE_HIDDEN = 256
MIX_DIM = VISION_FLAT + EMBED_DIM         # 3264


class AgentError(ValueError):
    pass


@dataclass(frozen=True)
class AgentConfig:
    vocab_words: int                      # content words; table adds pad+unk rows
    encoder: str = "bow"                  # "bow" | "lstm"
    action_count: int = NUM_ACTIONS
    instr_len: int = 10
    rp_frames: int = 3

    @property
    def table_rows(self) -> int:
        return self.vocab_words + 2


@dataclass
class AgentState:
    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, dtype=np.float32):
        z = lambda: np.zeros(CORE_HIDDEN, dtype=dtype)
        return cls(z(), z(), z(), z())

    def copy(self) -> "AgentState":
        return AgentState(self.h1.copy(), self.c1.copy(),
                          self.h2.copy(), self.c2.copy())


def param_specs(cfg: AgentConfig):
    a = cfg.action_count
    specs = [
        ("conv1.W", (32, 3, 8, 8)), ("conv1.b", (32,)),
        ("conv2.W", (64, 32, 4, 4)), ("conv2.b", (64,)),
        ("conv3.W", (64, 64, 3, 3)), ("conv3.b", (64,)),
        ("embed.T", (cfg.table_rows, EMBED_DIM)),
        ("lang.W", (2 * EMBED_DIM, 4 * EMBED_DIM)), ("lang.b", (4 * EMBED_DIM,)),
        ("core1.W", (MIX_DIM + CORE_HIDDEN, 4 * CORE_HIDDEN)),
        ("core1.b", (4 * CORE_HIDDEN,)),
        ("core2.W", (2 * CORE_HIDDEN, 4 * CORE_HIDDEN)),
        ("core2.b", (4 * CORE_HIDDEN,)),
        ("policy.W", (a, CORE_HIDDEN)), ("policy.b", (a,)),
        ("value.W", (1, CORE_HIDDEN)), ("value.b", (1,)),
        # temporal prediction: gate and decoder (W_b is policy.W by tying)
        ("tae.Wv", (CORE_HIDDEN, VISION_FLAT)),
        ("tae.Wy", (VISION_FLAT, CORE_HIDDEN)),
        ("dec3.W", (64, 64, 3, 3)), ("dec3.b", (64,)),
        ("dec2.W", (64, 32, 4, 4)), ("dec2.b", (32,)),
        ("dec1.W", (32, 3, 8, 8)), ("dec1.b", (3,)),
        # word prediction hidden layer (output layer = embed.T, tied)
        ("lp.W", (EMBED_DIM, VISION_FLAT)), ("lp.b", (EMBED_DIM,)),
        # reward-sign classifier over a short frame window
        ("rp.W1", (128, cfg.rp_frames * VISION_FLAT)), ("rp.b1", (128,)),
        ("rp.W2", (3, 128)), ("rp.b2", (3,)),
    ]
    return specs


# Uniform init gain per tensor: limit = gain / sqrt(fan_in).  ReLU-followed
# layers take the He gain so activations keep their scale through the
# vision stack; recurrent weights and the linear heads stay conservative.
_RELU_GAIN = float(np.sqrt(6.0))
_LINEAR_GAIN = float(np.sqrt(3.0))
_INIT_GAINS = {
    "conv1.W": _RELU_GAIN, "conv2.W": _RELU_GAIN, "conv3.W": _RELU_GAIN,
    "dec3.W": _RELU_GAIN, "dec2.W": _RELU_GAIN, "dec1.W": _LINEAR_GAIN,
    "lp.W": _RELU_GAIN, "rp.W1": _RELU_GAIN, "rp.W2": _LINEAR_GAIN,
    "tae.Wv": _LINEAR_GAIN, "tae.Wy": _LINEAR_GAIN,
}


def init_params(store: ParamStore, cfg: AgentConfig, seed: int,
                embed_init: float = 0.75):
    """Fan-in-scaled uniform init for kernels and matrices; normal(0,
    embed_init^2) for the embedding table; zero biases."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x1A17])))
    store.params[:] = 0
    for name, shape in store.specs:
        v = store.view(name)
        if name == "embed.T":
            v[:] = rng.normal(0.0, embed_init, size=shape).astype(store.dtype)
        elif len(shape) == 1:   # biases
            v[:] = 0
        else:
            if len(shape) == 4:
                fan_in = int(np.prod(shape[1:]))
            elif name.endswith(".W") and "core" in name or name == "lang.W":
                fan_in = shape[0]           # lstm weights are [in, 4*hid]
            else:
                fan_in = shape[1]
            gain = _INIT_GAINS.get(name, 1.0)
            v[:] = gain * fan_in_uniform(rng, shape, fan_in, store.dtype)
    store.ms[:] = 0


class AgentNet:
    """Parameter views plus the fast acting path and tape builders."""

    def __init__(self, cfg: AgentConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store
        self.grads = np.zeros(store.size, dtype=store.dtype)
        self.tensors = {}
        for name, shape in store.specs:
            off, _ = store.offsets[name]
            n = int(np.prod(shape))
            t = Tensor(store.params[off:off + n].reshape(shape),
                       requires_grad=True)
            t.grad = self.grads[off:off + n].reshape(shape)
            self.tensors[name] = t

    @classmethod
    def build(cls, cfg: AgentConfig, seed: int = 0, embed_init: float = 0.75):
        store = ParamStore(param_specs(cfg))
        init_params(store, cfg, seed, embed_init)
        return cls(cfg, store)

    def zero_grads(self):
        self.grads[:] = 0

    # -- fast (no-gradient) path ------------------------------------------

    def p(self, name: str) -> np.ndarray:
        return self.tensors[name].data

    def encode_vision_raw(self, obs: np.ndarray) -> np.ndarray:
        """obs [B,3,84,84] or [3,84,84] -> flat [B,3136] (or [3136])."""
        x, squeezed = (obs[None], True) if obs.ndim == 3 else (obs, False)
        if x.shape[1:] != (3, 84, 84):
            raise AgentError(f"expected [3,84,84] observations, got {x.shape[1:]}")
        chain = ((3, 84), (32, 20), (64, 9), (64, 7))
        for li, (cin, cout, k, s) in enumerate(VISION_CHANNELS, start=1):
            x, _ = ops.conv2d_raw(x, self.p(f"conv{li}.W"), self.p(f"conv{li}.b"), s)
            assert x.shape[1:] == (chain[li][0], chain[li][1], chain[li][1]), \
                f"vision shape chain broken at layer {li}: {x.shape}"
            np.maximum(x, 0, out=x)
        out = x.reshape(x.shape[0], VISION_FLAT)
        return out[0] if squeezed else out

    def encode_language_raw(self, token_ids, pad_id: int) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        keep = ids[ids != pad_id]
        table = self.p("embed.T")
        if self.cfg.encoder == "bow":
            if keep.size == 0:
                return np.zeros(EMBED_DIM, dtype=table.dtype)
            return table[keep].sum(axis=0)
        h = np.zeros(EMBED_DIM, dtype=table.dtype)
        c = np.zeros(EMBED_DIM, dtype=table.dtype)
        for tid in keep:
            h, c = ops.lstm_step_raw(table[tid], h, c,
                                     self.p("lang.W"), self.p("lang.b"))
        return h

    def act_raw(self, m: np.ndarray, state: AgentState):
        """One action-module step: m [3264] -> (pi, value, new_state)."""
        h1, c1 = ops.lstm_step_raw(m, state.h1, state.c1,
                                   self.p("core1.W"), self.p("core1.b"))
        h2, c2 = ops.lstm_step_raw(h1, state.h2, state.c2,
                                   self.p("core2.W"), self.p("core2.b"))
        logits = h2 @ self.p("policy.W").T + self.p("policy.b")
        pi = ops.softmax_raw(logits)
        value = float(h2 @ self.p("value.W")[0] + self.p("value.b")[0])
        return pi, value, AgentState(h1, c1, h2, c2)

    def policy_step(self, obs: np.ndarray, l: np.ndarray, state: AgentState):
        v = self.encode_vision_raw(obs)
        m = np.concatenate([v, l])
        return self.act_raw(m, state)

    # -- tape builders ------------------------------------------------------

    def vision_graph(self, obs_const: Tensor) -> Tensor:
        """obs [B,3,84,84] -> flat [B,3136] tensor through the conv stack."""
        x = obs_const
        for li, (cin, cout, k, s) in enumerate(VISION_CHANNELS, start=1):
            x = ops.relu(ops.conv2d(x, self.tensors[f"conv{li}.W"],
                                    self.tensors[f"conv{li}.b"], s))
        b = x.data.shape[0]
        return ops.reshape(x, (b, VISION_FLAT))

    def language_graph(self, token_ids, pad_id: int) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        keep = ids[ids != pad_id]
        table = self.tensors["embed.T"]
        if self.cfg.encoder == "bow":
            return ops.bow_encode(ids, table, pad_id)
        if keep.size == 0:
            return ops.scale(ops.bow_encode(ids, table, pad_id), 0.0)
        emb = ops.embedding_lookup(keep, table)
        hs, _ = ops.lstm_sequence(emb, np.zeros(EMBED_DIM, emb.dtype),
                                  np.zeros(EMBED_DIM, emb.dtype),
                                  self.tensors["lang.W"], self.tensors["lang.b"])
        return _last_row(hs)

    def core_graph(self, mixed: Tensor, state0: AgentState):
        """mixed [T,3264] -> (logits [T,A], values [T,1], final state)."""
        h1s, st1 = ops.lstm_sequence(mixed, state0.h1, state0.c1,
                                     self.tensors["core1.W"],
                                     self.tensors["core1.b"])
        h2s, st2 = ops.lstm_sequence(h1s, state0.h2, state0.c2,
                                     self.tensors["core2.W"],
                                     self.tensors["core2.b"])
        logits = ops.linear(h2s, self.tensors["policy.W"], self.tensors["policy.b"])
        values = ops.linear(h2s, self.tensors["value.W"], self.tensors["value.b"])
        final = AgentState(st1[0], st1[1], st2[0], st2[1])
        return logits, values, final, h2s

    def mix_graph(self, vision_flat: Tensor, lang: Tensor) -> Tensor:
        """Tile the episode's language encoding and concatenate: [T,3264]."""
        t = vision_flat.data.shape[0]
        tiled = _tile_rows(lang, t)
        return ops.concat([vision_flat, tiled], axis=1)


def _last_row(hs: Tensor) -> Tensor:
    t = hs.data.shape[0]
    out = Tensor(hs.data[t - 1].copy(), requires_grad=hs.requires_grad,
                 parents=[hs] if hs.requires_grad else ())

    def backward():
        g = np.zeros_like(hs.data)
        g[t - 1] = out.grad
        hs.accum(g)

    if out.requires_grad:
        out._backward_fn = backward
    return out


def _tile_rows(vec: Tensor, t: int) -> Tensor:
    out = Tensor(np.broadcast_to(vec.data, (t, vec.data.shape[0])).copy(),
                 requires_grad=vec.requires_grad,
                 parents=[vec] if vec.requires_grad else ())

    def backward():
        vec.accum(out.grad.sum(axis=0))

    if out.requires_grad:
        out._backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# Contract-level helpers mirroring the module operations


def encode_vision(net: AgentNet, obs: np.ndarray) -> np.ndarray:
    """[3,84,84] observation -> [64,7,7] representation."""
    flat = net.encode_vision_raw(obs)
    return flat.reshape(VISION_OUT_SHAPE)


def encode_language(net: AgentNet, token_ids, pad_id: int) -> np.ndarray:
    return net.encode_language_raw(token_ids, pad_id)


def mix(v_t: np.ndarray, l_t: np.ndarray) -> np.ndarray:
    return np.concatenate([v_t.reshape(-1), l_t])


def act(net: AgentNet, m_t: np.ndarray, state: AgentState):
    return net.act_raw(m_t, state)
