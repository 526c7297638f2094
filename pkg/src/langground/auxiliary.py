"""Auxiliary unsupervised objectives and the replay buffer feeding them.

Four losses supplement the actor-critic objective: temporal prediction of
the next frame from the current frame and action (sharing the vision stack
and, through the action embedding, the policy head), word prediction from
vision (output weights tied to the embedding table), reward-sign
classification over recent frame windows (skew-sampled toward rewarding
steps), and value regression on replayed sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import VISION_FLAT, AgentNet, AgentState
from .nn import ops
from .nn.tensor import Tensor

RP_CLASS_POSITIVE, RP_CLASS_NEGATIVE, RP_CLASS_ZERO = 0, 1, 2


def reward_class(r: float) -> int:
    if r > 0:
        return RP_CLASS_POSITIVE
    if r < 0:
        return RP_CLASS_NEGATIVE
    return RP_CLASS_ZERO


@dataclass(frozen=True)
class AuxWeights:
    vr: float = 0.5
    rp: float = 0.5
    lp: float = 0.5
    tae: float = 0.5


class ReplayBuffer:
    """Ring of recent core steps (one entry per action decision)."""

    def __init__(self, capacity: int = 2000, instr_len: int = 10,
                 frame_shape=(3, 84, 84), state_dim: int = 256):
        self.capacity = capacity
        self.frames = np.zeros((capacity,) + frame_shape, dtype=np.uint8)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.tokens = np.zeros((capacity, instr_len), dtype=np.int64)
        self.targets = np.zeros(capacity, dtype=np.int64)
        self.values = np.zeros(capacity, dtype=np.float32)
        self.episodes = np.full(capacity, -1, dtype=np.int64)
        self.dones = np.zeros(capacity, dtype=bool)
        self.states = np.zeros((capacity, 4, state_dim), dtype=np.float32)
        self.count = 0          # total appends ever

    def __len__(self):
        return min(self.count, self.capacity)

    def _slot(self, g: int) -> int:
        return g % self.capacity

    def valid_range(self):
        lo = max(0, self.count - self.capacity)
        return lo, self.count

    def append(self, frame_u8, action, reward, token_ids, target_word,
               value, episode_id, done, state: AgentState):
        s = self._slot(self.count)
        self.frames[s] = frame_u8
        self.actions[s] = action
        self.rewards[s] = reward
        self.tokens[s] = token_ids
        self.targets[s] = target_word
        self.values[s] = value
        self.episodes[s] = episode_id
        self.dones[s] = done
        self.states[s, 0] = state.h1
        self.states[s, 1] = state.c1
        self.states[s, 2] = state.h2
        self.states[s, 3] = state.c2
        self.count += 1

    def _globals(self):
        lo, hi = self.valid_range()
        return np.arange(lo, hi)

    def frames_f32(self, globs) -> np.ndarray:
        slots = np.asarray(globs) % self.capacity
        return self.frames[slots].astype(np.float32) / 255.0

    def sample_tae_pairs(self, rng, n: int):
        """Consecutive same-episode (i, i+1) pairs; the last stored step is
        never x_i.  Returns (idx_i, idx_next) global indices or None."""
        lo, hi = self.valid_range()
        if hi - lo < 2:
            return None
        g = self._globals()[:-1]
        s = g % self.capacity
        s1 = (g + 1) % self.capacity
        ok = self.episodes[s] == self.episodes[s1]
        pool = g[ok]
        if pool.size == 0:
            return None
        pick = pool[rng.integers(pool.size, size=n)]
        return pick, pick + 1

    def sample_lp(self, rng, n: int):
        lo, hi = self.valid_range()
        if hi == lo:
            return None
        g = self._globals()
        return g[rng.integers(g.size, size=n)]

    def sample_rp_windows(self, rng, n: int, frames: int = 3):
        """Windows of ``frames`` consecutive observations ending at step t,
        labelled by the sign of the reward following t.  Rewarding steps are
        drawn with probability 0.5; with none present, sampling falls back
        to uniform and the result is flagged."""
        lo, hi = self.valid_range()
        if hi == lo:
            return None
        g = self._globals()
        s = g % self.capacity
        rewarding = g[self.rewards[s] != 0]
        zero = g[self.rewards[s] == 0]
        fallback = rewarding.size == 0 or zero.size == 0
        picks = np.empty(n, dtype=np.int64)
        for i in range(n):
            if fallback:
                picks[i] = g[rng.integers(g.size)]
            elif rng.random() < 0.5:
                picks[i] = rewarding[rng.integers(rewarding.size)]
            else:
                picks[i] = zero[rng.integers(zero.size)]
        windows = np.empty((n, frames), dtype=np.int64)
        for i, t in enumerate(picks):
            ep = self.episodes[self._slot(t)]
            idx = [t]
            cur = t
            while len(idx) < frames:
                prev = cur - 1
                if prev >= lo and self.episodes[self._slot(prev)] == ep:
                    cur = prev
                else:
                    pass  # pad by repeating the episode's earliest frame
                idx.append(cur)
            windows[i] = idx[::-1]
        labels = np.array([reward_class(self.rewards[self._slot(t)])
                           for t in picks], dtype=np.int64)
        return windows, labels, fallback

    def sample_vr_sequence(self, rng, max_len: int):
        """Contiguous same-episode slice with stored rewards; returns
        (globals, rewards, terminal, bootstrap_value) or None."""
        lo, hi = self.valid_range()
        if hi - lo < 2:
            return None
        start = int(rng.integers(lo, hi))
        ep = self.episodes[self._slot(start)]
        idx = [start]
        while len(idx) < max_len:
            nxt = idx[-1] + 1
            if nxt >= hi or self.episodes[self._slot(nxt)] != ep:
                break
            idx.append(nxt)
            if self.dones[self._slot(nxt)]:
                break
        idx = np.asarray(idx)
        slots = idx % self.capacity
        last = slots[-1]
        terminal = bool(self.dones[last])
        if terminal:
            bootstrap = 0.0
        else:
            succ = idx[-1] + 1
            if succ < hi and self.episodes[self._slot(succ)] == ep:
                bootstrap = float(self.values[self._slot(succ)])
            else:
                bootstrap = float(self.values[last])
        return idx, self.rewards[slots].astype(np.float64), terminal, bootstrap

    def state_at(self, g: int) -> AgentState:
        s = self._slot(g)
        return AgentState(self.states[s, 0].copy(), self.states[s, 1].copy(),
                          self.states[s, 2].copy(), self.states[s, 3].copy())


# ---------------------------------------------------------------------------
# Loss graphs


def tae_loss(net: AgentNet, x_i: np.ndarray, a_i, x_next: np.ndarray) -> Tensor:
    """Predict the next observation from (observation, action); MSE.  The
    action embedding rows are the policy head's weight matrix."""
    y = net.vision_graph(Tensor(x_i))                       # [B,3136]
    wv = ops.linear(y, net.tensors["tae.Wv"])               # [B,256]
    wb = ops.embedding_lookup(np.asarray(a_i, dtype=np.int64),
                              net.tensors["policy.W"])      # [B,256] tied
    gate = ops.mul(wb, wv)
    yhat = ops.linear(gate, net.tensors["tae.Wy"])          # [B,3136]
    fmap = ops.reshape(yhat, (yhat.data.shape[0], 64, 7, 7))
    d = ops.relu(ops.deconv2d(fmap, net.tensors["dec3.W"], net.tensors["dec3.b"], 1))
    d = ops.relu(ops.deconv2d(d, net.tensors["dec2.W"], net.tensors["dec2.b"], 2))
    w = ops.deconv2d(d, net.tensors["dec1.W"], net.tensors["dec1.b"], 4)
    return ops.mse_loss(w, x_next)


def lp_loss(net: AgentNet, v_input: np.ndarray, target_words) -> Tensor:
    """Word prediction from vision; output weights are the embedding table."""
    n_words = net.cfg.vocab_words
    targets = np.asarray(target_words, dtype=np.int64)
    if targets.size and targets.max() >= n_words:
        raise ValueError("word-prediction target outside the vocabulary")
    y = net.vision_graph(Tensor(v_input))
    h = ops.relu(ops.linear(y, net.tensors["lp.W"], net.tensors["lp.b"]))
    logits = ops.tied_output(h, net.tensors["embed.T"], n_words)
    return ops.nll_loss(logits, targets)


def rp_loss(net: AgentNet, frame_windows: np.ndarray, classes) -> Tensor:
    """3-way reward-sign classification from a short frame window."""
    b, k = frame_windows.shape[:2]
    stacked = frame_windows.reshape(b * k, *frame_windows.shape[2:])
    y = net.vision_graph(Tensor(stacked))                   # [B*k, 3136]
    cat = ops.reshape(y, (b, k * VISION_FLAT))
    h = ops.relu(ops.linear(cat, net.tensors["rp.W1"], net.tensors["rp.b1"]))
    logits = ops.linear(h, net.tensors["rp.W2"], net.tensors["rp.b2"])
    return ops.nll_loss(logits, np.asarray(classes, dtype=np.int64))


def vr_loss(net: AgentNet, obs_seq: np.ndarray, token_ids, pad_id: int,
            state0: AgentState, returns: np.ndarray) -> Tensor:
    """Recompute values on a replayed sequence; MSE to its n-step returns."""
    v = net.vision_graph(Tensor(obs_seq))
    l = net.language_graph(token_ids, pad_id)
    m = net.mix_graph(v, l)
    _, values, _, _ = net.core_graph(m, state0)
    flat = ops.reshape(values, (values.data.shape[0],))
    return ops.mse_loss(flat, returns.astype(obs_seq.dtype))
