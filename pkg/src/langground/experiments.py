"""Experiment harness: frozen evaluation, curriculum gating, pretraining
transfer, and the run loop tying tasks, splits, trainer and metrics
together.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import splits as splits_mod
from . import world
from .agent import AgentConfig, AgentNet, AgentState, init_params, param_specs
from .config import RunManifest, manifest_text, resolve_task
from .metrics import EvalReport, MetricsWriter, TrailingWindow
from .nn.optim import ParamStore
from .render import obs_from_raw, render_raw
from .training import (CTL_LESSON, CTL_STOP, Hyperparams, RunSetup,
                       SharedBlocks, default_worker_count, run_training)

try:
    from importlib.metadata import version as _pkg_version
    CODE_VERSION = _pkg_version("langground")
except Exception:  # not installed
    CODE_VERSION = "unknown"


class ExperimentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Curriculum


@dataclass(frozen=True)
class CurriculumSpec:
    lessons: tuple                   # ordered task templates
    threshold: float = 0.95          # fraction of the lesson's reward scale
    window: int = 1000               # episodes


@dataclass
class CurriculumState:
    index: int = 0
    window: TrailingWindow = field(default_factory=lambda: TrailingWindow(1000))
    advancements: list = field(default_factory=list)


def curriculum_step(spec: CurriculumSpec, state: CurriculumState,
                    episode_reward: float) -> int:
    """Feed one episode reward; advance exactly once per threshold crossing
    (the trailing window resets on advancement).  Returns the lesson index."""
    if state.index >= len(spec.lessons) - 1:
        state.window.add(episode_reward)
        return state.index
    state.window.add(episode_reward)
    task = spec.lessons[state.index]
    if (state.window.count >= spec.window
            and state.window.mean() >= spec.threshold * task.scale):
        state.advancements.append({
            "from": state.index, "to": state.index + 1,
            "window_mean": state.window.mean(),
            "window_episodes": state.window.count,
        })
        state.index += 1
        state.window = TrailingWindow(spec.window)
    return state.index


# ---------------------------------------------------------------------------
# Frozen evaluation


def params_checksum(flat: np.ndarray) -> str:
    return hashlib.sha256(flat.tobytes()).hexdigest()


def evaluate(params_flat: np.ndarray, agent_cfg: AgentConfig, task,
             constraints, vocab, episodes: int, seed: int,
             greedy: bool = False, eval_stream: int = 0) -> EvalReport:
    """Run frozen-policy episodes; parameters are copied, never written."""
    store = ParamStore(param_specs(agent_cfg))
    store.load_flat(params_flat)
    net = AgentNet(agent_cfg, store)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, 0xE7A1, eval_stream])))
    successes = 0
    total_reward = 0.0
    for k in range(episodes):
        episode = world.sample_episode(task, constraints,
                                       (seed, 0xE7A1, eval_stream, k))
        tokens = np.asarray(episode.instruction.token_ids, dtype=np.int64)
        l_enc = net.encode_language_raw(tokens, vocab.pad_id)
        state = world.initial_state(episode)
        astate = AgentState.zeros()
        done = False
        while not done:
            obs = obs_from_raw(render_raw(state, episode))
            pi, _, astate = net.policy_step(obs, l_enc, astate)
            if greedy:
                action = int(np.argmax(pi))
            else:
                p = pi.astype(np.float64)
                p /= p.sum()
                action = int(rng.choice(len(p), p=p))
            for _ in range(4):
                state, _, done = world.step(state, episode, action)
                if done:
                    break
        if world.episode_success(episode, state):
            successes += 1
        total_reward += state.cumulative_reward
    return EvalReport(split=getattr(constraints, "name", "none") or "none",
                      episodes=episodes, successes=successes,
                      mean_reward=total_reward / max(1, episodes))


# ---------------------------------------------------------------------------
# Split resolution


def resolve_split(name: str | None, task) -> splits_mod.SplitConstraints | None:
    if name is None or name == "none":
        return None
    if name in splits_mod.EXPERIMENTS:
        return splits_mod.build_split(name)
    if name in ("wordspeed20_pre2", "wordspeed20_pre20"):
        return splits_mod.pretrain_split(name.rsplit("_", 1)[-1])
    if name.startswith("bigrams@"):
        fraction = float(name.split("@", 1)[1])
        held = splits_mod.sample_held_out_bigrams(task.colours, task.shapes,
                                                  fraction, seed=0xB19)
        return splits_mod.make_composition_split(task.colours, task.shapes,
                                                 held, name=name)
    raise ExperimentError(f"unknown split {name!r}")


def split_has_test(constraints) -> bool:
    if constraints is None:
        return False
    return bool(constraints.test_instructions or constraints.test_unigrams
                or (constraints.test_shapes and constraints.train_shapes)
                or (constraints.test_colours and constraints.train_colours))


# ---------------------------------------------------------------------------
# The run supervisor


class Supervisor:
    """Consumes worker records: writes metrics, maintains trailing windows,
    applies the stop rule, gates the curriculum, and runs periodic frozen
    evaluation blocks."""

    def __init__(self, manifest: RunManifest, setup: RunSetup,
                 curriculum: CurriculumSpec, constraints, writer: MetricsWriter,
                 out_dir: Path):
        self.manifest = manifest
        self.setup = setup
        self.curriculum = curriculum
        self.cur_state = CurriculumState(
            window=TrailingWindow(curriculum.window))
        self.constraints = constraints
        self.writer = writer
        self.out_dir = out_dir
        self.trailing_reward = TrailingWindow(manifest.stop_window)
        self.trailing_success = TrailingWindow(manifest.stop_window)
        self.episodes_seen = 0
        self.next_eval = manifest.eval_every or None
        self.next_ckpt = manifest.checkpoint_every or None
        self.eval_blocks = 0
        self.reports = []
        self.stopped_reason = None

    # -- helpers

    def _emit(self, record):
        self.writer.write(record)

    def _maybe_stop(self, shared):
        m = self.manifest
        if m.stop_metric is None:
            return
        window = (self.trailing_success if m.stop_metric == "accuracy"
                  else self.trailing_reward)
        if not window.full:
            return
        scale = self.curriculum.lessons[self.cur_state.index].scale
        threshold = (m.stop_threshold if m.stop_metric == "accuracy"
                     else m.stop_threshold * scale)
        on_last = self.cur_state.index == len(self.curriculum.lessons) - 1
        if on_last and window.mean() >= threshold:
            shared.control[CTL_STOP] = 1
            self.stopped_reason = (f"stop rule met: trailing {m.stop_metric} "
                                   f"{window.mean():.4f} >= {threshold:.4f}")
            self._emit({"type": "stop", "step": shared.global_env_steps,
                        "episode": self.episodes_seen,
                        "metric": m.stop_metric, "value": window.mean()})

    def _run_eval_block(self, shared, pauser):
        self.eval_blocks += 1
        flat = shared.store.params.copy()
        task = self.curriculum.lessons[self.cur_state.index]
        step = shared.global_env_steps
        for split_role, cons in self._eval_splits():
            report = evaluate(flat, self.setup.agent_cfg, task, cons,
                              self.setup.vocab, self.manifest.eval_episodes,
                              self.setup.run_seed,
                              greedy=self.manifest.eval_greedy,
                              eval_stream=self.eval_blocks)
            report.split = split_role
            report.step = step
            report.global_episode = self.episodes_seen
            self.reports.append(report)
            self._emit(report.record())
        self.writer.flush()

    def _eval_splits(self):
        out = [("train", self.constraints)]
        if split_has_test(self.constraints):
            out.append(("test", self.constraints.as_test()))
        return out

    def _checkpoint(self, shared, tag="checkpoint"):
        path = self.out_dir / f"{tag}.ckpt"
        ckpt.save(path, shared.store, meta={
            "encoder": self.setup.agent_cfg.encoder,
            "vocab": list(self.setup.vocab.words),
            "version": CODE_VERSION,
        })
        return path

    # -- the record hook

    def on_records(self, records, shared, pauser=None):
        for rec in records:
            if rec.get("type") == "episode":
                self.episodes_seen += 1
                self.trailing_reward.add(rec["reward"])
                self.trailing_success.add(1.0 if rec["success"] else 0.0)
                lesson_before = self.cur_state.index
                curriculum_step(self.curriculum, self.cur_state, rec["reward"])
                if self.cur_state.index != lesson_before:
                    shared.control[CTL_LESSON] = self.cur_state.index
                    event = dict(self.cur_state.advancements[-1])
                    event.update({"type": "curriculum",
                                  "step": shared.global_env_steps,
                                  "episode": self.episodes_seen})
                    self._emit(event)
                out = dict(rec)
                out.update({"step": shared.global_env_steps,
                            "episode": self.episodes_seen})
                self._emit(out)
                self._maybe_stop(shared)
            elif rec.get("type") == "train":
                out = {"type": "train", "step": shared.global_env_steps,
                       "episode": self.episodes_seen,
                       "worker": rec["worker"],
                       "trailing_reward": self.trailing_reward.mean(),
                       "trailing_accuracy": self.trailing_success.mean()}
                for key in ("loss_core", "loss_value", "loss_vr", "loss_rp",
                            "loss_lp", "loss_tae", "grad_norm", "lr",
                            "entropy"):
                    if key in rec:
                        out[key] = rec[key]
                self._emit(out)
            else:
                self._emit(dict(rec))

        if self.next_eval is not None and self.episodes_seen >= self.next_eval:
            self.next_eval += self.manifest.eval_every
            if pauser is not None:
                with pauser:
                    self._run_eval_block(shared, pauser)
            else:
                self._run_eval_block(shared, pauser)
        if self.next_ckpt is not None and self.episodes_seen >= self.next_ckpt:
            self.next_ckpt += self.manifest.checkpoint_every
            self._checkpoint(shared, tag=f"checkpoint_{self.episodes_seen}")

    def on_finish(self, shared):
        if self.manifest.eval_every:
            self._run_eval_block(shared, None)
        self._checkpoint(shared, tag="final")
        self._emit({"type": "finish", "step": shared.global_env_steps,
                    "episode": self.episodes_seen,
                    "trailing_reward": self.trailing_reward.mean(),
                    "trailing_accuracy": self.trailing_success.mean(),
                    "reason": self.stopped_reason or "budget",
                    "faults": int(shared.faults.sum())})
        self.writer.flush()


# ---------------------------------------------------------------------------
# Experiment entry points


def build_run(manifest: RunManifest):
    lessons = tuple(resolve_task(ref) for ref in manifest.tasks)
    vocabs = [world.task_vocabulary(t) for t in lessons]
    for v in vocabs[1:]:
        if v.words != vocabs[0].words:
            raise ExperimentError("curriculum lessons must share a vocabulary")
    vocab = vocabs[0]
    constraints = resolve_split(manifest.split, lessons[0])
    hp = manifest.build_hyperparams()
    if hp.num_workers <= 0:
        hp = dataclasses.replace(hp, num_workers=default_worker_count())
    encoder = lessons[0].encoder
    agent_cfg = AgentConfig(vocab_words=len(vocab), encoder=encoder,
                            instr_len=lessons[0].max_instr_len)
    setup = RunSetup(lessons=list(lessons), constraints=constraints, hp=hp,
                     vocab=vocab, agent_cfg=agent_cfg,
                     run_seed=manifest.seed)
    threshold = manifest.curriculum_threshold
    if threshold is None:
        threshold = 0.95
    curriculum = CurriculumSpec(lessons=lessons, threshold=threshold,
                                window=manifest.curriculum_window)
    return setup, curriculum, constraints


def run_experiment(manifest: RunManifest, out_dir=None):
    """Train per the manifest; returns the list of EvalReports produced."""
    out = Path(out_dir or manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup, curriculum, constraints = build_run(manifest)
    hp = setup.hp

    shared = SharedBlocks(param_specs(setup.agent_cfg), hp.num_workers,
                          use_shm=hp.num_workers > 1)
    init_params(shared.store, setup.agent_cfg, setup.run_seed, hp.embed_init)
    if manifest.pretrain_checkpoint:
        meta = ckpt.load_into(shared.store, manifest.pretrain_checkpoint,
                              vocab_words=setup.vocab.words)
        if meta.get("encoder") and meta["encoder"] != setup.agent_cfg.encoder:
            raise ExperimentError(
                f"checkpoint encoder {meta['encoder']!r} does not match "
                f"task encoder {setup.agent_cfg.encoder!r}")

    run_meta = {"code_version": CODE_VERSION, "seed": manifest.seed,
                "split": manifest.split or "none",
                "tasks": list(manifest.tasks),
                "condition": manifest.condition or "none"}
    for f in sorted(Hyperparams.__dataclass_fields__):
        run_meta[f"hp.{f}"] = getattr(hp, f)
    (out / "manifest.txt").write_text(manifest_text(run_meta))

    writer = MetricsWriter(out / "metrics.jsonl")
    supervisor = Supervisor(manifest, setup, curriculum, constraints, writer,
                            out)
    try:
        run_training(setup, supervisor, shared=shared)
    finally:
        writer.close()
        shared.close()
    return supervisor.reports


def pretrain_transfer(base_checkpoint, manifest: RunManifest, out_dir=None):
    """Load a pretraining checkpoint and continue training on a new split.
    The checkpoint vocabulary must cover the new split's words; embedding
    rows for words unseen during pretraining keep their initial values."""
    manifest = dataclasses.replace(manifest,
                                   pretrain_checkpoint=str(base_checkpoint))
    return run_experiment(manifest, out_dir=out_dir)
