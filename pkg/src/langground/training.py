"""Asynchronous advantage actor-critic training.

One parameter vector (and its RMSProp accumulators) is shared by all
workers.  Each worker repeatedly snapshots the shared parameters, collects
a bounded rollout with action repeat, computes the composite loss (core
actor-critic plus the enabled auxiliary objectives), clips the global
gradient norm and pushes an RMSProp update into the shared store with the
linearly annealed learning rate.  Updates are lock-free; single-worker runs
are exactly deterministic given the seeds.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import world
from .agent import AgentConfig, AgentNet, AgentState, init_params, param_specs
from .auxiliary import AuxWeights, ReplayBuffer, lp_loss, rp_loss, tae_loss, vr_loss
from .grammar import Vocabulary, meaningful_word
from .nn import ops
from .nn.optim import ParamStore, clip_global_norm, rmsprop_update
from .nn.tensor import Tensor
from .render import obs_from_raw, render_raw

AUX_TASKS = ("rp", "vr", "lp", "tae")

# shared control slots
CTL_STOP, CTL_PAUSE, CTL_LESSON = 0, 1, 2


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    # fixed settings
    train_steps: int = 2_000_000
    env_steps_per_core_step: int = 4
    num_workers: int = 1
    unroll_length: int = 50
    vr_batch_size: int = 1
    rp_batch_size: int = 10
    lp_batch_size: int = 10
    tae_batch_size: int = 10
    encoder_type: str = "bow"
    additional_discounting: float = 0.99
    cost_base: float = 0.5
    clip_grad_norm: float = 100.0
    decay: float = 0.99
    epsilon: float = 0.1
    learning_rate_finish: float = 0.0
    momentum: float = 0.0
    # sampled settings (defaults are mid-range picks)
    vr_weight: float = 0.5
    rp_weight: float = 0.5
    lp_weight: float = 0.5
    tae_weight: float = 0.5
    embed_init: float = 0.75
    entropy_cost: float = 0.002
    learning_rate_start: float = 0.0007
    # desk-scale extras
    aux_tasks: tuple = AUX_TASKS
    replay_capacity: int = 2000
    vr_seq_len: int = 12

    def aux_weights(self) -> AuxWeights:
        return AuxWeights(vr=self.vr_weight, rp=self.rp_weight,
                          lp=self.lp_weight, tae=self.tae_weight)


SAMPLED_FIELDS = ("vr_weight", "rp_weight", "lp_weight", "tae_weight",
                  "embed_init", "entropy_cost", "learning_rate_start")


def sample_hyperparams(seed: int, base: Hyperparams | None = None) -> Hyperparams:
    """Draw the sampled settings: the four auxiliary weights and embed_init
    uniformly, entropy_cost uniformly, learning_rate_start log-uniformly."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5A5A])))
    draws = {
        "vr_weight": rng.uniform(0.1, 1.0),
        "rp_weight": rng.uniform(0.1, 1.0),
        "lp_weight": rng.uniform(0.1, 1.0),
        "tae_weight": rng.uniform(0.1, 1.0),
        "embed_init": rng.uniform(0.5, 1.0),
        "entropy_cost": rng.uniform(0.0005, 0.005),
        "learning_rate_start": float(np.exp(rng.uniform(np.log(0.0001),
                                                        np.log(0.002)))),
    }
    base = base or Hyperparams()
    return replace(base, **draws)


def anneal_lr(hp: Hyperparams, global_env_steps: int) -> float:
    frac = min(1.0, max(0.0, global_env_steps / max(1, hp.train_steps)))
    return hp.learning_rate_start + (hp.learning_rate_finish
                                     - hp.learning_rate_start) * frac


# ---------------------------------------------------------------------------
# Returns and the actor-critic loss


def returns_from_rewards(rewards, terminal: bool, bootstrap: float,
                         lam: float = 0.99) -> np.ndarray:
    """Backward recursion R_t = r_t + lam * R_{t+1}; the horizon value is the
    bootstrap (0 when terminal)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0 if terminal else float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + lam * acc
        out[t] = acc
    return out


@dataclass
class Rollout:
    obs: np.ndarray             # uint8 [T,3,84,84]
    token_ids: np.ndarray       # [s]
    actions: np.ndarray         # [T]
    rewards: np.ndarray         # [T], summed over the action-repeat block
    values: np.ndarray          # [T], acting-time estimates
    log_policy: np.ndarray      # [T], log pi(a_t) at acting time
    state0: AgentState          # recurrent state at the start of the unroll
    terminal: bool
    bootstrap_value: float

    def __post_init__(self):
        if len(self.actions) > 50:
            raise TrainError("rollout longer than the 50-step unroll bound")

    @property
    def length(self) -> int:
        return len(self.actions)


def compute_returns(rollout: Rollout, lam: float = 0.99) -> np.ndarray:
    return returns_from_rewards(rollout.rewards, rollout.terminal,
                                rollout.bootstrap_value, lam)


def a3c_loss(rollout: Rollout, returns, pi, values, entropy_cost: float,
             cost_base: float = 0.5) -> float:
    """Independent scalar transcription of the objective: policy gradient
    term with a constant advantage, squared value error, and the entropy
    bonus, all scaled by cost_base."""
    returns = np.asarray(returns, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    acts = np.asarray(rollout.actions)
    t = np.arange(len(acts))
    logp = np.log(np.clip(pi, 1e-30, None))
    adv = returns - values
    policy_term = -(logp[t, acts] * adv).sum()
    value_term = ((returns - values) ** 2).sum()
    entropy = -(pi * logp).sum()
    return float(cost_base * (policy_term + value_term - entropy_cost * entropy))


def a3c_graph(logits: Tensor, values: Tensor, actions, returns,
              entropy_cost: float, cost_base: float) -> Tensor:
    """Differentiable version of a3c_loss over the update tape."""
    dtype = logits.data.dtype
    t = len(actions)
    logp = ops.log_softmax(logits)
    picked = ops.take_rows_at(logp, actions)
    vflat = ops.reshape(values, (t,))
    adv = (np.asarray(returns) - vflat.data.astype(np.float64)).astype(dtype)
    policy_term = ops.sum_all(ops.mul(picked, Tensor(-adv)))
    diff = ops.add(vflat, Tensor((-np.asarray(returns)).astype(dtype)))
    value_term = ops.sum_all(ops.mul(diff, diff))
    p = ops.softmax(logits)
    ent_term = ops.scale(ops.sum_all(ops.mul(p, logp)), entropy_cost)
    total = ops.add(ops.add(policy_term, value_term), ent_term)
    return ops.scale(total, cost_base)


# ---------------------------------------------------------------------------
# Shared blocks


class SharedBlocks:
    """Parameter/optimizer state plus counters and control words, optionally
    backed by shared memory so forked workers update one store lock-free."""

    def __init__(self, specs, num_workers: int, use_shm: bool = False):
        self.num_workers = num_workers
        self.use_shm = use_shm
        self._shm = []
        probe = ParamStore(specs)
        psize = probe.size
        if use_shm:
            params = self._alloc(psize * 4, np.float32)
            ms = self._alloc(psize * 4, np.float32)
            self.env_steps = self._alloc(num_workers * 8, np.int64)
            self.episodes = self._alloc(num_workers * 8, np.int64)
            self.faults = self._alloc(num_workers * 8, np.int64)
            self.control = self._alloc(8 * 8, np.int64)
            self.acks = self._alloc(num_workers * 8, np.int64)
            self.store = ParamStore(specs, params_buf=params, ms_buf=ms)
        else:
            self.store = probe
            self.env_steps = np.zeros(num_workers, dtype=np.int64)
            self.episodes = np.zeros(num_workers, dtype=np.int64)
            self.faults = np.zeros(num_workers, dtype=np.int64)
            self.control = np.zeros(8, dtype=np.int64)
            self.acks = np.zeros(num_workers, dtype=np.int64)

    def _alloc(self, nbytes: int, dtype):
        from multiprocessing import shared_memory
        shm = shared_memory.SharedMemory(create=True, size=nbytes)
        self._shm.append(shm)
        arr = np.frombuffer(shm.buf, dtype=dtype)
        arr[:] = 0
        return arr

    @property
    def global_env_steps(self) -> int:
        return int(self.env_steps.sum())

    @property
    def global_episodes(self) -> int:
        return int(self.episodes.sum())

    def close(self):
        # release references into shared memory before closing the segments
        self.store = None
        self.env_steps = self.episodes = self.faults = None
        self.control = self.acks = None
        for shm in self._shm:
            try:
                shm.close()
                shm.unlink()
            except FileNotFoundError:
                pass
        self._shm = []


# ---------------------------------------------------------------------------
# Worker


@dataclass
class RunSetup:
    lessons: list                   # TaskTemplate or TaskMixture per lesson
    constraints: object             # SplitConstraints or None
    hp: Hyperparams
    vocab: Vocabulary
    agent_cfg: AgentConfig
    run_seed: int = 0
    lp_target_rule: str = "rightmost"


class Worker:
    """One rollout-collecting, gradient-pushing worker."""

    def __init__(self, worker_id: int, setup: RunSetup, shared: SharedBlocks):
        self.id = worker_id
        self.setup = setup
        self.shared = shared
        hp = setup.hp
        self.hp = hp
        self.local = ParamStore(param_specs(setup.agent_cfg))
        self.net = AgentNet(setup.agent_cfg, self.local)
        self.buffer = ReplayBuffer(hp.replay_capacity,
                                   instr_len=setup.agent_cfg.instr_len)
        self.rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([setup.run_seed, 1000 + worker_id])))
        self.episode_idx = 0
        self.unrolls = 0
        self._ep = None
        self._last_losses = {}

    # -- episode plumbing --------------------------------------------------

    def _current_task(self):
        lesson = int(self.shared.control[CTL_LESSON])
        lessons = self.setup.lessons
        return lessons[min(lesson, len(lessons) - 1)]

    def _begin_episode(self):
        while True:
            key = (self.setup.run_seed, self.id, self.episode_idx)
            self.episode_idx += 1
            try:
                episode = world.sample_episode(self._current_task(),
                                               self.setup.constraints, key)
                break
            except world.WorldError:
                self.shared.faults[self.id] += 1
        vocab = self.setup.vocab
        tokens = np.asarray(episode.instruction.token_ids, dtype=np.int64)
        target = meaningful_word(episode.instruction, vocab,
                                 self.setup.lp_target_rule)
        self._ep = {
            "episode": episode,
            "sim": world.initial_state(episode),
            "tokens": tokens,
            "target": target,
            "astate": AgentState.zeros(),
            "reward": 0.0,
            "env_steps": 0,
            "id": self.episode_idx,
        }

    # -- one unroll ---------------------------------------------------------

    def run_unroll(self):
        """Sync, collect one rollout (cut at episode end), update the shared
        store; returns the metric records this unroll produced."""
        hp = self.hp
        shared = self.shared
        self.local.load_flat(shared.store.params)
        if self._ep is None:
            self._begin_episode()
        ep = self._ep
        episode = ep["episode"]
        l_enc = self.net.encode_language_raw(ep["tokens"], self.setup.vocab.pad_id)

        obs_list, actions, rewards, values, logps = [], [], [], [], []
        state0 = ep["astate"].copy()
        records = []
        terminal = False
        for _ in range(hp.unroll_length):
            raw = render_raw(ep["sim"], episode)
            obs = obs_from_raw(raw)
            pi, value, next_state = self.net.policy_step(obs, l_enc, ep["astate"])
            p = pi.astype(np.float64)
            p /= p.sum()
            action = int(self.rng.choice(len(p), p=p))
            pre_state = ep["astate"]
            r_sum = 0.0
            for _ in range(hp.env_steps_per_core_step):
                ep["sim"], r, terminal = world.step(ep["sim"], episode, action)
                r_sum += r
                shared.env_steps[self.id] += 1
                if terminal:
                    break
            obs_list.append(raw)
            actions.append(action)
            rewards.append(r_sum)
            values.append(value)
            logps.append(float(np.log(max(pi[action], 1e-30))))
            self.buffer.append(raw, action, r_sum, ep["tokens"], ep["target"],
                               value, ep["id"], terminal, pre_state)
            ep["astate"] = next_state
            ep["reward"] += r_sum
            if terminal:
                break

        if terminal:
            bootstrap = 0.0
        else:
            raw = render_raw(ep["sim"], episode)
            _, bootstrap, _ = self.net.policy_step(obs_from_raw(raw), l_enc,
                                                   ep["astate"])
        rollout = Rollout(
            obs=np.stack(obs_list),
            token_ids=ep["tokens"],
            actions=np.asarray(actions, dtype=np.int64),
            rewards=np.asarray(rewards, dtype=np.float64),
            values=np.asarray(values, dtype=np.float64),
            log_policy=np.asarray(logps, dtype=np.float64),
            state0=state0,
            terminal=terminal,
            bootstrap_value=float(bootstrap),
        )
        self._update(rollout)
        self.unrolls += 1

        if terminal:
            success = world.episode_success(episode, ep["sim"])
            shared.episodes[self.id] += 1
            records.append({
                "type": "episode", "worker": self.id,
                "reward": float(ep["reward"]),
                "success": bool(success),
                "length": int(ep["sim"].step_count),
                "instruction": episode.instruction.string,
                "lesson": int(shared.control[CTL_LESSON]),
            })
            self._ep = None

        rec = {"type": "train", "worker": self.id,
               "unroll": self.unrolls, "len": rollout.length}
        rec.update(self._last_losses)
        records.append(rec)
        return records

    def _update(self, rollout: Rollout):
        hp = self.hp
        net = self.net
        lam = hp.additional_discounting
        returns = compute_returns(rollout, lam)
        obs = rollout.obs.astype(np.float32) / 255.0
        vision = net.vision_graph(Tensor(obs))
        lang = net.language_graph(rollout.token_ids, self.setup.vocab.pad_id)
        mixed = net.mix_graph(vision, lang)
        logits, values, _, _ = net.core_graph(mixed, rollout.state0)
        core = a3c_graph(logits, values, rollout.actions, returns,
                         hp.entropy_cost, hp.cost_base)
        pi_all = ops.softmax_raw(logits.data)
        entropy = float(-(pi_all * np.log(np.clip(pi_all, 1e-30, None))
                          ).sum(axis=-1).mean())
        value_err = float(((returns - values.data[:, 0].astype(np.float64))
                           ** 2).mean())
        losses = {"loss_core": core.item(), "entropy": entropy,
                  "loss_value": value_err}
        total = core
        w = hp.aux_weights()
        if "tae" in hp.aux_tasks:
            pairs = self.buffer.sample_tae_pairs(self.rng, hp.tae_batch_size)
            if pairs is not None:
                xi = self.buffer.frames_f32(pairs[0])
                xn = self.buffer.frames_f32(pairs[1])
                ai = self.buffer.actions[pairs[0] % self.buffer.capacity]
                loss = tae_loss(net, xi, ai, xn)
                losses["loss_tae"] = loss.item()
                total = ops.add(total, ops.scale(loss, w.tae))
        if "lp" in hp.aux_tasks:
            idx = self.buffer.sample_lp(self.rng, hp.lp_batch_size)
            if idx is not None:
                frames = self.buffer.frames_f32(idx)
                targets = self.buffer.targets[idx % self.buffer.capacity]
                loss = lp_loss(net, frames, targets)
                losses["loss_lp"] = loss.item()
                total = ops.add(total, ops.scale(loss, w.lp))
        if "rp" in hp.aux_tasks:
            got = self.buffer.sample_rp_windows(self.rng, hp.rp_batch_size)
            if got is not None:
                windows, labels, _ = got
                frames = self.buffer.frames_f32(windows.reshape(-1))
                frames = frames.reshape(windows.shape[0], windows.shape[1],
                                        *frames.shape[1:])
                loss = rp_loss(net, frames, labels)
                losses["loss_rp"] = loss.item()
                total = ops.add(total, ops.scale(loss, w.rp))
        if "vr" in hp.aux_tasks:
            for _ in range(hp.vr_batch_size):
                got = self.buffer.sample_vr_sequence(self.rng, hp.vr_seq_len)
                if got is None:
                    continue
                idx, rews, term, boot = got
                vr_returns = returns_from_rewards(rews, term, boot, lam)
                frames = self.buffer.frames_f32(idx)
                tok = self.buffer.tokens[idx[0] % self.buffer.capacity]
                st0 = self.buffer.state_at(idx[0])
                loss = vr_loss(net, frames, tok, self.setup.vocab.pad_id,
                               st0, vr_returns)
                losses["loss_vr"] = loss.item()
                total = ops.add(total, ops.scale(loss, w.vr))

        net.zero_grads()
        total.backward()
        _, norm = clip_global_norm(net.grads, hp.clip_grad_norm)
        losses["grad_norm"] = float(norm)
        lr = anneal_lr(hp, self.shared.global_env_steps)
        rmsprop_update(self.shared.store, net.grads, lr, hp.decay, hp.epsilon,
                       hp.momentum)
        losses["lr"] = float(lr)
        self._last_losses = losses

    # -- control helpers -----------------------------------------------------

    def should_stop(self) -> bool:
        return (self.shared.control[CTL_STOP] != 0
                or self.shared.global_env_steps >= self.hp.train_steps)

    def honour_pause(self):
        gen = int(self.shared.control[CTL_PAUSE])
        if gen:
            self.shared.acks[self.id] = gen
            while self.shared.control[CTL_PAUSE] == gen:
                time.sleep(0.002)

    def loop(self):
        """Worker process body: run until the budget or stop flag."""
        while not self.should_stop():
            self.honour_pause()
            yield self.run_unroll()


def default_worker_count() -> int:
    return min(os.cpu_count() or 1, 32)


def _worker_process(worker_id, setup, shared, queue):
    try:
        worker = Worker(worker_id, setup, shared)
        for records in worker.loop():
            for r in records:
                queue.put(r)
    except Exception as exc:  # surfaced by the driver
        queue.put({"type": "worker_error", "worker": worker_id,
                   "error": repr(exc)})
    finally:
        queue.put({"type": "worker_done", "worker": worker_id})


def run_training(setup: RunSetup, supervisor, shared: SharedBlocks | None = None):
    """Drive training to completion.  ``supervisor`` receives every record
    batch (with the shared blocks) and may set control flags, run frozen
    evaluations, or request a stop."""
    own_shared = shared is None
    hp = setup.hp
    if shared is None:
        shared = SharedBlocks(param_specs(setup.agent_cfg), hp.num_workers,
                              use_shm=hp.num_workers > 1)
        init_params(shared.store, setup.agent_cfg, setup.run_seed,
                    hp.embed_init)
    try:
        if hp.num_workers == 1:
            worker = Worker(0, setup, shared)
            while not worker.should_stop():
                records = worker.run_unroll()
                supervisor.on_records(records, shared, pauser=None)
        else:
            import queue as queue_mod
            from collections import deque
            import multiprocessing as mp
            ctx = mp.get_context("fork")
            queue = ctx.Queue()
            procs = [ctx.Process(target=_worker_process,
                                 args=(w, setup, shared, queue), daemon=True)
                     for w in range(hp.num_workers)]
            for p in procs:
                p.start()
            done = 0
            pending = deque()
            pauser = _Pauser(shared, hp.num_workers, queue, pending)
            while done < len(procs):
                rec = pending.popleft() if pending else queue.get()
                if rec.get("type") == "worker_done":
                    done += 1
                    continue
                if rec.get("type") == "worker_error":
                    shared.control[CTL_STOP] = 1
                    raise TrainError(f"worker {rec['worker']} failed: {rec['error']}")
                supervisor.on_records([rec], shared, pauser=pauser)
            for p in procs:
                p.join()
        supervisor.on_finish(shared)
    finally:
        if own_shared:
            shared.close()
    return None


class _Pauser:
    """Drain-all/ack/resume protocol for frozen evaluation blocks.  While
    waiting for acknowledgements the queue keeps being drained so workers
    can never deadlock on a full record pipe."""

    def __init__(self, shared: SharedBlocks, num_workers: int, queue, pending):
        self.shared = shared
        self.num_workers = num_workers
        self.queue = queue
        self.pending = pending
        self._gen = 0

    def _drain(self):
        import queue as queue_mod
        while True:
            try:
                self.pending.append(self.queue.get_nowait())
            except queue_mod.Empty:
                return

    def __enter__(self):
        self._gen += 1
        self.shared.control[CTL_PAUSE] = self._gen
        deadline = time.time() + 300
        while not np.all(self.shared.acks[:self.num_workers] == self._gen):
            self._drain()
            if time.time() > deadline:
                raise TrainError("workers did not acknowledge pause")
            time.sleep(0.005)
        return self

    def __exit__(self, *exc):
        self.shared.control[CTL_PAUSE] = 0
        return False
