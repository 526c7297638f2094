"""Text configuration files: task/level definitions and run manifests.

Both formats are plain key/value lines ("key = value", '#' comments);
comma-separated values parse as lists and "*" means the full inventory
pool.  Task files describe one task family; a manifest names the task(s),
split, budget, seeds and hyperparameter overrides for a run.
"""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

from .factors import COLOURS, PATTERNS, SHADES, SHAPES
from .training import Hyperparams
from .world import TaskMixture, TaskTemplate


class ConfigError(ValueError):
    pass


def parse_kv_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path) -> dict:
    return parse_kv_text(Path(path).read_text())


def _as_list(value: str) -> tuple:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _as_bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


_POOL_DEFAULTS = {"shapes": SHAPES, "colours": COLOURS, "patterns": PATTERNS,
                  "shades": SHADES}


def task_from_mapping(kv: dict, name: str = "task") -> TaskTemplate:
    kw = {"name": kv.get("name", name)}
    if "family" not in kv:
        raise ConfigError("task file needs a 'family' key")
    kw["family"] = kv["family"]
    for key, attr, conv in (
        ("rooms", "room_count", int),
        ("open_boundary", "open_boundary", _as_bool),
        ("objects", "object_count", int),
        ("scale", "scale", float),
        ("max_steps", "max_steps", int),
        ("encoder", "encoder", str),
        ("spawn", "spawn_rule", str),
        ("multi_pick_fraction", "multi_pick_fraction", float),
        ("instr_len", "max_instr_len", int),
    ):
        if key in kv:
            kw[attr] = conv(kv[key])
    for key in ("shapes", "colours", "patterns", "shades", "sizes"):
        if key in kv and kv[key] != "*":
            kw[key] = _as_list(kv[key])
    if "floor_colours" in kv and kv["floor_colours"] != "*":
        kw["floor_colours"] = _as_list(kv["floor_colours"])
    if "unigram_words" in kv and kv["unigram_words"] != "*":
        kw["unigram_words"] = _as_list(kv["unigram_words"])
    try:
        return TaskTemplate(**kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad task configuration: {err}") from err


def load_task(path):
    p = Path(path)
    kv = parse_kv_file(p)
    if kv.get("family") == "Mixture":
        if "mix" not in kv:
            raise ConfigError("mixture task needs a 'mix' list")
        subs = tuple(resolve_task(ref) for ref in _as_list(kv["mix"]))
        return TaskMixture(name=kv.get("name", p.stem), tasks=subs)
    return task_from_mapping(kv, name=p.stem)


def builtin_config_path(name: str) -> Path:
    base = resources.files("langground").joinpath("configs")
    p = Path(str(base.joinpath(name)))
    if not p.exists():
        raise ConfigError(f"no built-in config named {name!r}")
    return p


def resolve_task(ref: str):
    """A task reference: a path, or the name of a built-in .task file."""
    p = Path(ref)
    if p.exists():
        return load_task(p)
    return load_task(builtin_config_path(ref if ref.endswith(".task")
                                         else ref + ".task"))


_HP_FIELDS = {f.name: f for f in dataclasses.fields(Hyperparams)}


@dataclasses.dataclass
class RunManifest:
    tasks: tuple                    # lesson task references, in order
    split: str | None = None
    seed: int = 0
    out_dir: str = "runs/run"
    budget: int | None = None       # env steps; None = hp default
    eval_every: int = 0             # episodes between eval blocks (0 = off)
    eval_episodes: int = 200
    eval_greedy: bool = False
    workers: int | None = None
    sample_hp_seed: int | None = None
    hp_overrides: dict = dataclasses.field(default_factory=dict)
    stop_metric: str | None = None  # "accuracy" | "reward"
    stop_threshold: float = 0.0
    stop_window: int = 1000
    curriculum_threshold: float | None = None   # fraction of scale
    curriculum_window: int = 1000
    pretrain_checkpoint: str | None = None
    condition: str | None = None
    checkpoint_every: int = 0       # episodes; 0 = only at the end

    def build_hyperparams(self) -> Hyperparams:
        from .training import sample_hyperparams
        hp = Hyperparams()
        if self.sample_hp_seed is not None:
            hp = sample_hyperparams(self.sample_hp_seed, hp)
        fixes = dict(self.hp_overrides)
        if self.budget is not None:
            fixes["train_steps"] = self.budget
        if self.workers is not None:
            fixes["num_workers"] = self.workers
        if fixes:
            hp = dataclasses.replace(hp, **fixes)
        return hp


def manifest_from_mapping(kv: dict) -> RunManifest:
    kv = dict(kv)
    if "task" in kv:
        tasks = (kv.pop("task"),)
    elif "lessons" in kv:
        tasks = _as_list(kv.pop("lessons"))
    else:
        raise ConfigError("manifest needs 'task' or 'lessons'")
    m = RunManifest(tasks=tasks)
    simple = {
        "split": ("split", str),
        "seed": ("seed", int),
        "out": ("out_dir", str),
        "budget": ("budget", int),
        "eval_every": ("eval_every", int),
        "eval_episodes": ("eval_episodes", int),
        "eval_greedy": ("eval_greedy", _as_bool),
        "workers": ("workers", int),
        "sample_hp": ("sample_hp_seed", int),
        "stop_metric": ("stop_metric", str),
        "stop_threshold": ("stop_threshold", float),
        "stop_window": ("stop_window", int),
        "curriculum_threshold": ("curriculum_threshold", float),
        "curriculum_window": ("curriculum_window", int),
        "pretrain": ("pretrain_checkpoint", str),
        "condition": ("condition", str),
        "checkpoint_every": ("checkpoint_every", int),
    }
    for key, value in kv.items():
        if key in simple:
            attr, conv = simple[key]
            setattr(m, attr, conv(value))
        elif key.startswith("hp."):
            name = key[3:]
            if name not in _HP_FIELDS:
                raise ConfigError(f"unknown hyperparameter {name!r}")
            ftype = _HP_FIELDS[name].type
            if name == "aux_tasks":
                m.hp_overrides[name] = _as_list(value)
            elif ftype in ("int", int):
                m.hp_overrides[name] = int(value)
            elif ftype in ("float", float):
                m.hp_overrides[name] = float(value)
            elif ftype in ("str", str):
                m.hp_overrides[name] = value
            else:
                m.hp_overrides[name] = value
        else:
            raise ConfigError(f"unknown manifest key {key!r}")
    return m


def load_manifest(path) -> RunManifest:
    p = Path(path)
    if not p.exists():
        p = builtin_config_path(str(path) if str(path).endswith(".exp")
                                else str(path) + ".exp")
    return manifest_from_mapping(parse_kv_file(p))


def manifest_text(run_meta: dict) -> str:
    """Render the run manifest record (fixed + sampled hyperparameters,
    seeds, code version) as key = value lines."""
    lines = []
    for key in sorted(run_meta):
        value = run_meta[key]
        if isinstance(value, (list, tuple)):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
