"""Procedural grid worlds: layout generation, factored object placement,
instruction-consistent episode sampling, reward balancing and dynamics.

Episode sampling is a pure function of (task, constraints, seed).  The
episode RNG stream is consumed in a fixed, documented order: layout, then
instruction slot bindings, then objects, then spawn.  Instruction
instantiation itself consumes no randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import grammar
from .factors import (
    COLOURS,
    FACTOR_POOLS,
    GENERIC_WORD,
    PATTERNS,
    PATTERN_WORDS,
    RELATIONS,
    SHADE_RANK,
    SHADES,
    SHAPES,
    SIZE_RANK,
    SIZES,
    WORD_TO_PATTERN,
    ObjectFactors,
)
from .grammar import Instruction, Slot, Template, Vocabulary

# Action set: selection is implicit by walking onto an object's cell.
ACTIONS = (
    "move-forward", "move-backward", "strafe-left", "strafe-right",
    "turn-left", "turn-right", "no-op",
)
NUM_ACTIONS = len(ACTIONS)

# Facing: 0=N, 1=E, 2=S, 3=W in (row, col) coordinates, row 0 at the top.
FORWARD = ((-1, 0), (0, 1), (1, 0), (0, -1))

ROOM_SIZE = 11          # default room footprint incl. walls
CORRIDOR_LEN = 3

# Instruction words for the single-word vocabulary-acquisition task:
# all shapes, all colours, the four relations, and the two pattern terms
# named in the reference setup (striped, spotted) -- 59 words total.
UNIGRAM_WORDS_59 = SHAPES + COLOURS + RELATIONS + ("striped", "spotted")


class WorldError(ValueError):
    pass


class ConstraintInfeasible(WorldError):
    """Factor pools empty after applying split constraints."""


@dataclass(frozen=True)
class RoomSpec:
    bounds: tuple           # (r0, c0, r1, c1), half-open interior rectangle
    floor_colour: str
    door_cells: tuple = ()

    def contains(self, cell) -> bool:
        r0, c0, r1, c1 = self.bounds
        return r0 <= cell[0] < r1 and c0 <= cell[1] < c1


@dataclass(frozen=True)
class LayoutSpec:
    grid_height: int
    grid_width: int
    rooms: tuple
    corridors: tuple
    spawn_candidates: tuple
    object_slots: tuple

    @property
    def walkable(self) -> frozenset:
        cells = set(self.corridors)
        for room in self.rooms:
            r0, c0, r1, c1 = room.bounds
            cells.update((r, c) for r in range(r0, r1) for c in range(c0, c1))
        return frozenset(cells)

    def room_index_of(self, cell):
        for i, room in enumerate(self.rooms):
            if room.contains(cell):
                return i
        return None


@dataclass(frozen=True)
class PlacedObject:
    factors: ObjectFactors
    cell: tuple
    reward: float = 0.0
    room_index: int | None = None

    def __post_init__(self):
        if not (-10.0 <= self.reward <= 10.0):
            raise WorldError(f"reward {self.reward} outside [-10, 10]")


@dataclass(frozen=True)
class EpisodeSpec:
    layout: LayoutSpec
    objects: tuple
    instruction: Instruction
    agent_spawn: tuple          # ((row, col), facing)
    target_indices: tuple       # indices into objects satisfying the instruction
    multi_pick: bool = False
    scale: float = 10.0
    max_steps: int = 300
    rng_seed: int = 0
    balanced: bool = True       # False when no distractors made balancing impossible

    def room_of(self, cell):
        idx = self.layout.room_index_of(cell)
        return None if idx is None else self.layout.rooms[idx]


@dataclass(frozen=True)
class SimState:
    agent_cell: tuple
    facing: int
    step_count: int = 0
    remaining_objects: tuple = ()
    selected: tuple = ()        # objects picked so far, in pick order
    terminated: bool = False
    cumulative_reward: float = 0.0


@dataclass(frozen=True)
class TaskTemplate:
    """Task-level configuration an episode is sampled from."""

    name: str = "task"
    family: str = "Unigram"
    room_count: int = 1
    open_boundary: bool = False      # adjacent rooms without a dividing wall
    object_count: int = 2
    scale: float = 10.0
    max_steps: int = 300
    shapes: tuple = SHAPES
    colours: tuple = COLOURS
    patterns: tuple = PATTERNS
    shades: tuple = SHADES
    sizes: tuple = SIZES
    floor_colours: tuple | None = None   # None: task colours for InRoom, else all
    unigram_words: tuple | None = None   # Unigram family word pool
    encoder: str = "bow"                 # "bow" or "lstm"
    spawn_rule: str = "auto"             # auto | equidistant | uniform
    multi_pick_fraction: float = 0.5     # Selection family: share of "pick all"
    max_instr_len: int = 10

    def __post_init__(self):
        if self.family not in grammar.TASK_FAMILIES:
            raise WorldError(f"unknown task family {self.family!r}")
        if self.encoder not in ("bow", "lstm"):
            raise WorldError(f"unknown encoder {self.encoder!r}")

    @property
    def effective_floor_colours(self) -> tuple:
        if self.floor_colours is not None:
            return self.floor_colours
        return self.colours if self.family == "InRoom" else COLOURS

    @property
    def effective_unigrams(self) -> tuple:
        if self.unigram_words is not None:
            return self.unigram_words
        if self.family == "RelativeSize":
            return ("larger", "smaller")
        if self.family == "RelativeShade":
            return ("lighter", "darker")
        return UNIGRAM_WORDS_59


@dataclass(frozen=True)
class TaskMixture:
    """A uniform mixture over task families sharing one world and
    vocabulary; each episode draws its family first."""

    name: str
    tasks: tuple

    def __post_init__(self):
        if not self.tasks:
            raise WorldError("empty task mixture")
        for t in self.tasks[1:]:
            if t.encoder != self.tasks[0].encoder:
                raise WorldError("mixture tasks must share an encoder mode")
            if t.max_instr_len != self.tasks[0].max_instr_len:
                raise WorldError("mixture tasks must share max_instr_len")

    @property
    def encoder(self):
        return self.tasks[0].encoder

    @property
    def scale(self):
        return self.tasks[0].scale

    @property
    def max_steps(self):
        return self.tasks[0].max_steps

    @property
    def max_instr_len(self):
        return self.tasks[0].max_instr_len


def classify_word(word: str) -> str:
    """Slot kind of a single-word instruction."""
    if word in SHAPES:
        return "SHAPE"
    if word in COLOURS:
        return "COLOUR"
    if word in WORD_TO_PATTERN:
        return "PATTERN"
    if word in RELATIONS:
        return "RELATION"
    raise WorldError(f"cannot classify instruction word {word!r}")


def family_templates(task: TaskTemplate) -> tuple:
    f = task.family
    if f in ("Unigram", "Bigram", "RelativeSize", "RelativeShade"):
        # Bare instructions; templates are materialized per-episode from the
        # drawn word class, so none are fixed here.
        return ()
    if f == "Selection":
        return (
            grammar.parse_template("pick the <COLOUR> object", f),
            grammar.parse_template("pick all <COLOUR>", f, multi_pick=True),
        )
    if f == "NextTo":
        return (
            grammar.parse_template(
                "pick the <COLOUR> object next to the <anchor:COLOUR> object", f),
        )
    if f == "InRoom":
        return (
            grammar.parse_template("pick the <COLOUR> in the <ROOMCOLOUR> room", f),
        )
    if f == "Referring":
        noun_variants = ("<SHAPE>", "<GENERIC>")
        patterns = ["pick the <SHAPE>"]
        for adj in ("<COLOUR>", "<PATTERN>", "<SHADE>"):
            for noun in noun_variants:
                patterns.append(f"pick the {adj} {noun}")
        for adj in ("<SHADE>", "<PATTERN>"):
            for noun in noun_variants:
                patterns.append(f"pick the {adj} <COLOUR> {noun}")
        return tuple(grammar.parse_template(p, f) for p in patterns)
    raise WorldError(f"no templates for family {f!r}")


def task_vocabulary(task) -> Vocabulary:
    """All words reachable from the task's templates and factor pools.

    The vocabulary covers the task's declared pools, not just an active
    split, so checkpoints transfer across splits of the same task.
    """
    if isinstance(task, TaskMixture):
        words = []
        for sub in task.tasks:
            for w in task_vocabulary(sub).words:
                if w not in words:
                    words.append(w)
        return Vocabulary(words)
    f = task.family
    words: list = []

    def add(ws):
        for w in ws:
            if w not in words:
                words.append(w)

    if f in ("Unigram", "RelativeSize", "RelativeShade"):
        add(task.effective_unigrams)
    elif f == "Bigram":
        add(task.colours)
        add(task.shapes)
    else:
        for tpl in family_templates(task):
            for part in tpl.pattern:
                if isinstance(part, Slot):
                    if part.kind == "SHAPE":
                        add(task.shapes)
                    elif part.kind in ("COLOUR", "ROOMCOLOUR"):
                        add(task.colours)
                    elif part.kind == "PATTERN":
                        add(PATTERN_WORDS[p] for p in task.patterns)
                    elif part.kind == "SHADE":
                        add(task.shades)
                    elif part.kind == "SIZE":
                        add(task.sizes)
                    elif part.kind == "RELATION":
                        add(RELATIONS)
                    elif part.kind == "GENERIC":
                        add((GENERIC_WORD,))
                else:
                    add((part,))
    return Vocabulary(words)


# ---------------------------------------------------------------------------
# Layout generation


def generate_layout(rng, task: TaskTemplate) -> LayoutSpec:
    """Rooms laid out left to right; adjacent rooms are joined either by a
    3-cell corridor through the dividing wall or, with open_boundary, by
    removing the wall entirely (floor colour still marks the room)."""
    n = task.room_count
    if n < 1:
        raise WorldError("room_count must be >= 1")
    if n > len(task.effective_floor_colours):
        raise ConstraintInfeasible("not enough floor colours for unique rooms")
    pool = task.effective_floor_colours
    floor = list(rng.choice(len(pool), size=n, replace=False))
    floor_colours = [pool[i] for i in floor]

    interior = ROOM_SIZE - 2
    height = ROOM_SIZE
    rooms = []      # [bounds, colour, doors]
    corridors = []
    col = 1
    for i in range(n):
        bounds = (1, col, 1 + interior, col + interior)
        rooms.append([bounds, floor_colours[i], []])
        col += interior
        if i + 1 < n and not task.open_boundary:
            gap_row = 1 + int(rng.integers(interior))
            cells = [(gap_row, col + k) for k in range(CORRIDOR_LEN)]
            corridors.extend(cells)
            rooms[-1][2].append(cells[0])       # door on this room's wall
            col += CORRIDOR_LEN
    width = col + 1
    if not task.open_boundary and n > 1:
        for i in range(1, n):
            left_wall_col = rooms[i][0][1] - 1
            rooms[i][2].extend(c for c in corridors if c[1] == left_wall_col)

    room_specs = tuple(
        RoomSpec(tuple(b), fc, tuple(map(tuple, d))) for b, fc, d in rooms
    )
    layout = LayoutSpec(
        grid_height=height,
        grid_width=width,
        rooms=room_specs,
        corridors=tuple(corridors),
        spawn_candidates=(),
        object_slots=(),
    )
    slots = []
    for room in room_specs:
        r0, c0, r1, c1 = room.bounds
        slots.extend((r, c) for r in range(r0, r1) for c in range(c0, c1))
    layout = replace(layout, object_slots=tuple(slots),
                     spawn_candidates=tuple(slots) + tuple(corridors))
    if not _connected(layout):
        raise WorldError("generated layout is not connected")
    return layout


def _connected(layout: LayoutSpec) -> bool:
    cells = layout.walkable
    if not cells:
        return False
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        r, c = stack.pop()
        for dr, dc in FORWARD:
            nxt = (r + dr, c + dc)
            if nxt in cells and nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen == cells


def bfs_distances(layout: LayoutSpec, source, blocked=()) -> dict:
    """Walkable shortest-path distances from ``source``; ``blocked`` cells
    terminate traversal (they get a distance but are not expanded)."""
    blocked = set(blocked) - {source}
    dist = {source: 0}
    queue = [source]
    walkable = layout.walkable
    while queue:
        nxt_queue = []
        for r, c in queue:
            d = dist[(r, c)]
            for dr, dc in FORWARD:
                cell = (r + dr, c + dc)
                if cell in walkable and cell not in dist:
                    dist[cell] = d + 1
                    if cell not in blocked:
                        nxt_queue.append(cell)
        queue = nxt_queue
    return dist


# ---------------------------------------------------------------------------
# Reward balancing


def balance_rewards(objects, target_index: int, scale: float):
    """Target gets +scale, each of the k distractors -scale/k, so a uniform
    random pick has expectation 0.  Returns (objects, balanced_flag)."""
    if not (0 < scale <= 10):
        raise WorldError("scale must be in (0, 10]")
    n = len(objects)
    if not (0 <= target_index < n):
        raise WorldError("target index out of range")
    k = n - 1
    if k == 0:
        return [replace(objects[0], reward=scale)], False
    out = []
    for i, obj in enumerate(objects):
        r = scale if i == target_index else -scale / k
        out.append(replace(obj, reward=r))
    return out, True


def balance_rewards_multi(objects, target_indices, scale: float):
    """Multi-target balancing: each target +scale, each distractor
    -scale * (#targets / #distractors)."""
    targets = set(target_indices)
    t = len(targets)
    d = len(objects) - t
    if t == 0:
        raise WorldError("at least one target required")
    if d == 0:
        return [replace(o, reward=scale) for o in objects], False
    neg = -scale * t / d
    if neg < -10.0:
        neg = -10.0  # keep within the reward range; balancing then inexact
    out = [replace(o, reward=scale if i in targets else neg)
           for i, o in enumerate(objects)]
    return out, (neg > -10.0 or t <= d)


# ---------------------------------------------------------------------------
# Episode sampling

_MAX_ATTEMPTS = 200


_VOCAB_CACHE = {}


def _cached_vocabulary(task):
    vocab = _VOCAB_CACHE.get(task)
    if vocab is None:
        vocab = task_vocabulary(task)
        _VOCAB_CACHE[task] = vocab
    return vocab


def sample_episode(task, constraints, seed) -> EpisodeSpec:
    """Sample one episode.  ``seed`` may be an int or a sequence of ints;
    identical inputs produce identical episodes.  Mixtures draw their task
    family first from the same seeded stream."""
    key = tuple(seed) if isinstance(seed, (list, tuple)) else (int(seed),)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
    if isinstance(task, TaskMixture):
        vocab = _cached_vocabulary(task)
        sub = task.tasks[int(rng.integers(len(task.tasks)))]
        last_err = None
        for _ in range(_MAX_ATTEMPTS):
            try:
                return _sample_once(sub, constraints, rng, vocab, key)
            except _RetrySampling as err:
                last_err = err
        raise ConstraintInfeasible(
            f"could not sample a valid episode for mixture {task.name!r}: {last_err}")
    vocab = _cached_vocabulary(task)
    last_err = None
    for _ in range(_MAX_ATTEMPTS):
        try:
            return _sample_once(task, constraints, rng, vocab, key)
        except _RetrySampling as err:
            last_err = err
    raise ConstraintInfeasible(
        f"could not sample a valid episode for task {task.name!r}: {last_err}")


class _RetrySampling(Exception):
    pass


def _choice(rng, seq):
    if len(seq) == 0:
        raise ConstraintInfeasible("empty pool")
    return seq[int(rng.integers(len(seq)))]


def _sample_factors(rng, task: TaskTemplate, shapes=None, colours=None, **fixed):
    pools = {
        "shape": shapes if shapes is not None else task.shapes,
        "colour": colours if colours is not None else task.colours,
        "pattern": task.patterns,
        "shade": task.shades,
        "size": task.sizes,
    }
    values = {}
    for name in ("shape", "colour", "pattern", "shade", "size"):
        if name in fixed and fixed[name] is not None:
            values[name] = fixed[name]
        else:
            values[name] = _choice(rng, pools[name])
    return ObjectFactors(**values)


def _sample_once(task, constraints, rng, vocab, key) -> EpisodeSpec:
    layout = generate_layout(rng, task)
    fam = task.family
    if fam in ("Unigram", "RelativeSize", "RelativeShade"):
        instruction, objects, targets, multi = _gen_unigram(task, constraints, rng, vocab)
    elif fam == "Bigram":
        instruction, objects, targets, multi = _gen_bigram(task, constraints, rng, vocab)
    elif fam == "Selection":
        instruction, objects, targets, multi = _gen_selection(task, rng, vocab)
    elif fam == "NextTo":
        instruction, objects, targets, multi = _gen_next_to(task, rng, vocab)
    elif fam == "InRoom":
        instruction, objects, targets, multi = _gen_in_room(task, layout, rng, vocab)
    elif fam == "Referring":
        instruction, objects, targets, multi = _gen_referring(task, rng, vocab)
    else:
        raise WorldError(f"unhandled family {fam!r}")

    objects = _place_objects(rng, layout, objects, task, targets)
    if multi:
        objects, balanced = balance_rewards_multi(objects, targets, task.scale)
    else:
        objects, balanced = balance_rewards(objects, targets[0], task.scale)
    spawn = _sample_spawn(rng, layout, objects, task, targets)

    episode = EpisodeSpec(
        layout=layout,
        objects=tuple(objects),
        instruction=instruction,
        agent_spawn=spawn,
        target_indices=tuple(targets),
        multi_pick=multi,
        scale=task.scale,
        max_steps=task.max_steps,
        rng_seed=key[-1],
        balanced=balanced,
    )
    _verify_episode(episode)
    return episode


def _verify_episode(episode: EpisodeSpec):
    sat = [i for i, o in enumerate(episode.objects)
           if grammar.satisfies(o, episode, episode.instruction)]
    if set(sat) != set(episode.target_indices):
        raise _RetrySampling(
            f"instruction satisfied by {sat}, expected {list(episode.target_indices)}")
    if not episode.multi_pick and len(sat) != 1:
        raise _RetrySampling("single-pick episode without a unique referent")
    if not sat:
        raise _RetrySampling("no object satisfies the instruction")


def _bare(word: str, kind: str, family: str, vocab, max_len):
    tpl = Template((Slot(kind),), family)
    return grammar.instantiate(tpl, {kind: word}, vocab, max_len)


def _gen_unigram(task, constraints, rng, vocab):
    words = task.effective_unigrams
    if constraints is not None:
        allowed = constraints.active_unigrams()
        if allowed is not None:
            words = tuple(w for w in words if w in allowed)
    if not words:
        raise ConstraintInfeasible("no unigram instruction words available")
    word = _choice(rng, words)
    kind = classify_word(word)
    family = task.family
    instruction = _bare(word, kind, family, vocab, task.max_instr_len)

    shapes = _restrict(task.shapes, constraints, "shapes")
    colours = _restrict(task.colours, constraints, "colours")

    if kind == "RELATION":
        if word in ("larger", "smaller"):
            shape = _choice(rng, shapes)
            lo, hi = _distinct_pair(rng, SIZES, SIZE_RANK)
            target_size, other_size = (hi, lo) if word == "larger" else (lo, hi)
            target = _sample_factors(rng, task, shapes=shapes, colours=colours,
                                     shape=shape, size=target_size)
            other = _sample_factors(rng, task, shapes=shapes, colours=colours,
                                    shape=shape, size=other_size)
        else:
            colour = _choice(rng, colours)
            lo, hi = _distinct_pair(rng, SHADES, SHADE_RANK)
            target_shade, other_shade = (hi, lo) if word == "lighter" else (lo, hi)
            target = _sample_factors(rng, task, shapes=shapes, colours=colours,
                                     colour=colour, shade=target_shade)
            other = _sample_factors(rng, task, shapes=shapes, colours=colours,
                                    colour=colour, shade=other_shade)
        return instruction, [target, other], [0], False

    factor = {"SHAPE": "shape", "COLOUR": "colour", "PATTERN": "pattern"}[kind]
    value = WORD_TO_PATTERN[word] if kind == "PATTERN" else word
    target = _sample_factors(rng, task, shapes=shapes, colours=colours,
                             **{factor: value})
    others = []
    for _ in range(task.object_count - 1):
        pool = {"shape": shapes, "colour": colours, "pattern": task.patterns}[factor]
        alt = [v for v in pool if v != value]
        if not alt:
            raise ConstraintInfeasible(f"no confounder values for {factor}")
        others.append(_sample_factors(rng, task, shapes=shapes, colours=colours,
                                      **{factor: _choice(rng, alt)}))
    return instruction, [target] + others, [0], False


def _distinct_pair(rng, pool, rank):
    a = _choice(rng, pool)
    b = _choice(rng, [p for p in pool if p != a])
    return (a, b) if rank[a] < rank[b] else (b, a)


def _restrict(pool, constraints, which):
    if constraints is None:
        return pool
    allowed = constraints.active_factors(which)
    if allowed is None:
        return pool
    out = tuple(v for v in pool if v in allowed)
    if not out:
        raise ConstraintInfeasible(f"{which} pool empty after split constraints")
    return out


def _gen_bigram(task, constraints, rng, vocab):
    instrs = None if constraints is None else constraints.active_instructions()
    if instrs is None:
        instrs = ([("colour", c) for c in task.colours]
                  + [("shape", s) for s in task.shapes]
                  + [("bigram", c, s) for c in task.colours for s in task.shapes])
    if not instrs:
        raise ConstraintInfeasible("no instructions available for bigram task")
    pick = instrs[int(rng.integers(len(instrs)))]

    banned = frozenset() if constraints is None else constraints.banned_bigrams()
    required = None if constraints is None else constraints.required_bigrams()

    def object_bigram_ok(colour, shape):
        if required is not None:
            return (colour, shape) in required
        return (colour, shape) not in banned

    if pick[0] == "bigram":
        _, colour, shape = pick
        tpl = Template((Slot("COLOUR"), Slot("SHAPE")), task.family)
        instruction = grammar.instantiate(
            tpl, {"COLOUR": colour, "SHAPE": shape}, vocab, task.max_instr_len)
        target = _sample_factors(rng, task, colour=colour, shape=shape)
    else:
        kind, value = ("COLOUR", pick[1]) if pick[0] == "colour" else ("SHAPE", pick[1])
        instruction = _bare(value, kind, task.family, vocab, task.max_instr_len)
        # Keep the target's free factor away from held-out bigrams when any
        # choice permits it; instructions on a held-out factor value cannot.
        if kind == "COLOUR":
            pool = [s for s in task.shapes if object_bigram_ok(value, s)]
            shape = _choice(rng, pool or task.shapes)
            target = _sample_factors(rng, task, colour=value, shape=shape)
        else:
            pool = [c for c in task.colours if object_bigram_ok(c, value)]
            colour = _choice(rng, pool or task.colours)
            target = _sample_factors(rng, task, colour=colour, shape=value)

    candidates = [(c, s) for c in task.colours for s in task.shapes
                  if object_bigram_ok(c, s)]
    others = []
    ctx_probe = _PredicateProbe(task)
    for _ in range(task.object_count - 1):
        opts = [cs for cs in candidates
                if not ctx_probe.would_satisfy(instruction, cs)]
        if not opts:
            raise ConstraintInfeasible("no confounder bigrams available")
        c, s = opts[int(rng.integers(len(opts)))]
        others.append(_sample_factors(rng, task, colour=c, shape=s))
    return instruction, [target] + others, [0], False


class _PredicateProbe:
    """Attribute-only satisfaction check for candidate confounder factors."""

    def __init__(self, task):
        self.task = task

    def would_satisfy(self, instruction, colour_shape):
        colour, shape = colour_shape
        slots = instruction.slots
        if "COLOUR" in slots and slots["COLOUR"] != colour:
            return False
        if "SHAPE" in slots and slots["SHAPE"] != shape:
            return False
        return True


def _gen_selection(task, rng, vocab):
    colour = _choice(rng, task.colours)
    multi = rng.random() < task.multi_pick_fraction
    templates = family_templates(task)
    tpl = templates[1] if multi else templates[0]
    instruction = grammar.instantiate(tpl, {"COLOUR": colour}, vocab,
                                      task.max_instr_len)
    n = task.object_count
    if multi:
        n_targets = 2 if n < 5 else int(rng.integers(2, 4))
        n_targets = min(n_targets, n - 1)
    else:
        n_targets = 1
    other_colours = [c for c in task.colours if c != colour]
    if not other_colours:
        raise ConstraintInfeasible("selection task needs >= 2 colours")
    objects = [_sample_factors(rng, task, colour=colour) for _ in range(n_targets)]
    objects += [_sample_factors(rng, task, colour=_choice(rng, other_colours))
                for _ in range(n - n_targets)]
    return instruction, objects, list(range(n_targets)), multi


def _gen_next_to(task, rng, vocab):
    x = _choice(rng, task.colours)
    y = _choice(rng, [c for c in task.colours if c != x])
    tpl = family_templates(task)[0]
    instruction = grammar.instantiate(
        tpl, {"COLOUR": x, "anchor:COLOUR": y}, vocab, task.max_instr_len)
    n = max(task.object_count, 2)
    objects = [_sample_factors(rng, task, colour=x),
               _sample_factors(rng, task, colour=y)]
    for i in range(n - 2):
        colour = x if i % 2 == 0 else y   # decoys keep the ambiguity pressure
        objects.append(_sample_factors(rng, task, colour=colour))
    return instruction, objects, [0], False


def _gen_in_room(task, layout, rng, vocab):
    if len(layout.rooms) < 2:
        raise WorldError("InRoom task needs at least two rooms")
    x = _choice(rng, task.colours)
    room_idx = int(rng.integers(len(layout.rooms)))
    y = layout.rooms[room_idx].floor_colour
    tpl = family_templates(task)[0]
    instruction = grammar.instantiate(
        tpl, {"COLOUR": x, "ROOMCOLOUR": y}, vocab, task.max_instr_len)
    n = max(task.object_count, 2)
    # target in room Y; one decoy of colour X in another room; rest non-X
    objects = [_sample_factors(rng, task, colour=x)]
    rooms = [room_idx]
    other_rooms = [i for i in range(len(layout.rooms)) if i != room_idx]
    objects.append(_sample_factors(rng, task, colour=x))
    rooms.append(_choice(rng, other_rooms))
    other_colours = [c for c in task.colours if c != x]
    for _ in range(n - 2):
        objects.append(_sample_factors(rng, task, colour=_choice(rng, other_colours)))
        rooms.append(None)
    return instruction, list(zip(objects, rooms)), [0], False


def _gen_referring(task, rng, vocab):
    templates = family_templates(task)
    tpl = templates[int(rng.integers(len(templates)))]
    bindings = {}
    fixed = {}
    for slot in tpl.slots:
        if slot.kind == "SHAPE":
            w = _choice(rng, task.shapes)
            bindings[slot.name] = w
            fixed["shape"] = w
        elif slot.kind == "GENERIC":
            bindings[slot.name] = GENERIC_WORD
        elif slot.kind == "COLOUR":
            w = _choice(rng, task.colours)
            bindings[slot.name] = w
            fixed["colour"] = w
        elif slot.kind == "PATTERN":
            p = _choice(rng, task.patterns)
            bindings[slot.name] = PATTERN_WORDS[p]
            fixed["pattern"] = p
        elif slot.kind == "SHADE":
            w = _choice(rng, task.shades)
            bindings[slot.name] = w
            fixed["shade"] = w
    instruction = grammar.instantiate(tpl, bindings, vocab, task.max_instr_len)
    target = _sample_factors(rng, task, **fixed)
    others = []
    for _ in range(task.object_count - 1):
        others.append(_sample_confounder(rng, task, fixed))
    return instruction, [target] + others, [0], False


def _sample_confounder(rng, task, fixed, tries=50):
    """A confounder differing from the instruction in >= 1 bound factor."""
    for _ in range(tries):
        cand = _sample_factors(rng, task)
        if any(getattr(cand, k) != v for k, v in fixed.items()):
            return cand
    raise ConstraintInfeasible("cannot sample a non-matching confounder")


def _place_objects(rng, layout, objects, task, targets):
    """Assign cells.  Objects may arrive as (factors, room_index) pairs with
    placement constrained to that room; NextTo tasks get adjacency-aware
    placement."""
    placed = []
    used = set()
    slots_by_room = {}
    for i, room in enumerate(layout.rooms):
        slots_by_room[i] = [c for c in layout.object_slots if room.contains(c)]

    def draw_slot(pool):
        pool = [c for c in pool if c not in used]
        if not pool:
            raise _RetrySampling("no free object slots")
        cell = pool[int(rng.integers(len(pool)))]
        used.add(cell)
        return cell

    if task.family == "NextTo":
        # target pair adjacent; all other objects placed non-adjacent to
        # anything that could create a second matching pair
        all_slots = list(layout.object_slots)
        for attempt in range(50):
            used.clear()
            a = draw_slot(all_slots)
            nbrs = [c for c in _neighbours(a) if c in layout.object_slots]
            nbrs = [c for c in nbrs if c not in used]
            if not nbrs:
                continue
            b = nbrs[int(rng.integers(len(nbrs)))]
            used.add(b)
            rest = []
            ok = True
            for obj in objects[2:]:
                far = [c for c in all_slots if c not in used
                       and not any(n in used or n in rest for n in _neighbours(c))]
                if not far:
                    ok = False
                    break
                cell = far[int(rng.integers(len(far)))]
                used.add(cell)
                rest.append(cell)
            if ok:
                cells = [a, b] + rest
                break
        else:
            raise _RetrySampling("could not place next-to constellation")
        for obj, cell in zip(objects, cells):
            placed.append(PlacedObject(obj, cell,
                                       room_index=layout.room_index_of(cell)))
        return placed

    for entry in objects:
        if isinstance(entry, tuple) and not isinstance(entry, ObjectFactors):
            factors, room_idx = entry
        else:
            factors, room_idx = entry, None
        if room_idx is None:
            cell = draw_slot(layout.object_slots)
        else:
            cell = draw_slot(slots_by_room[room_idx])
        placed.append(PlacedObject(factors, cell,
                                   room_index=layout.room_index_of(cell)))
    return placed


def _neighbours(cell):
    r, c = cell
    return ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))


def _sample_spawn(rng, layout, objects, task, targets):
    object_cells = {o.cell for o in objects}
    candidates = [c for c in layout.spawn_candidates if c not in object_cells]
    if not candidates:
        raise _RetrySampling("no spawn candidates")
    rule = task.spawn_rule
    if rule == "auto":
        rule = "equidistant" if len(objects) == 2 else "uniform"
    if rule == "equidistant" and len(objects) >= 2:
        dists = [bfs_distances(layout, o.cell, blocked=object_cells - {o.cell})
                 for o in objects[:2]]
        scored = []
        for c in candidates:
            if c in dists[0] and c in dists[1]:
                gap = abs(dists[0][c] - dists[1][c])
                scored.append((gap, c))
        if not scored:
            raise _RetrySampling("no spawn cell reaches both objects")
        best = min(g for g, _ in scored)
        pool = [c for g, c in scored if g == best]
    else:
        pool = candidates
    cell = pool[int(rng.integers(len(pool)))]
    facing = int(rng.integers(4))
    return (cell, facing)


# ---------------------------------------------------------------------------
# Dynamics


def initial_state(episode: EpisodeSpec) -> SimState:
    cell, facing = episode.agent_spawn
    return SimState(agent_cell=cell, facing=facing,
                    remaining_objects=episode.objects)


def step(state: SimState, episode: EpisodeSpec, action: int):
    """Apply one action; returns (state, reward, done)."""
    if state.terminated:
        raise WorldError("step() on a terminated episode")
    if not (0 <= action < NUM_ACTIONS):
        raise WorldError(f"action id {action} out of range")

    cell, facing = state.agent_cell, state.facing
    if action == 4:
        facing = (facing - 1) % 4
    elif action == 5:
        facing = (facing + 1) % 4
    elif action != 6:
        fwd = FORWARD[facing]
        right = FORWARD[(facing + 1) % 4]
        delta = {
            0: fwd,
            1: (-fwd[0], -fwd[1]),
            2: (-right[0], -right[1]),
            3: right,
        }[action]
        nxt = (cell[0] + delta[0], cell[1] + delta[1])
        if nxt in episode.layout.walkable:
            cell = nxt

    reward = 0.0
    remaining = state.remaining_objects
    selected = state.selected
    terminated = False
    hit = [o for o in remaining if o.cell == cell]
    if hit:
        obj = hit[0]
        reward += obj.reward
        remaining = tuple(o for o in remaining if o is not obj)
        selected = selected + (obj,)
        if episode.multi_pick:
            targets = {episode.objects[i] for i in episode.target_indices}
            terminated = all(t in selected for t in targets)
        else:
            terminated = True

    step_count = state.step_count + 1
    if step_count >= episode.max_steps:
        terminated = True

    new_state = SimState(
        agent_cell=cell,
        facing=facing,
        step_count=step_count,
        remaining_objects=remaining,
        selected=selected,
        terminated=terminated,
        cumulative_reward=state.cumulative_reward + reward,
    )
    return new_state, reward, terminated


def episode_success(episode: EpisodeSpec, state: SimState) -> bool:
    """Picked exactly the instruction's referent(s) and nothing else."""
    targets = {episode.objects[i] for i in episode.target_indices}
    picked = set(state.selected)
    return picked == targets


def enumerate_next_to_pairs(episode: EpisodeSpec):
    """All unordered adjacent object pairs."""
    out = []
    objs = episode.objects
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            if grammar._adjacent(objs[i].cell, objs[j].cell):
                out.append((objs[i], objs[j]))
    return out
