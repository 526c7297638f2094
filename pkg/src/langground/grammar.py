"""Instruction grammar: vocabulary, templates, tokenizer and the predicate
that decides which objects satisfy an instruction.

Templates are sequences of literal words and typed slots.  Slots are typed
by the factor they constrain (SHAPE, COLOUR, PATTERN, SHADE, SIZE), plus
RELATION (larger/smaller/lighter/darker), ROOMCOLOUR (floor colour of the
containing room), GENERIC (the word "object", matching any shape) and an
"anchor" group used by next-to templates to describe the neighbouring
object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .factors import (
    GENERIC_WORD,
    RELATIONS,
    SHADE_RANK,
    SIZE_RANK,
    WORD_TO_PATTERN,
)

SLOT_TYPES = (
    "SHAPE", "COLOUR", "PATTERN", "SHADE", "SIZE", "RELATION",
    "ROOMCOLOUR", "GENERIC",
)

TASK_FAMILIES = (
    "Selection", "NextTo", "InRoom", "Referring", "Unigram", "Bigram",
    "RelativeSize", "RelativeShade",
)

PAD_WORD = "<pad>"
UNK_WORD = "<unk>"


class GrammarError(ValueError):
    pass


class Vocabulary:
    """Dense word ids in [0, |V|); pad and unk ids sit above the word range
    so templates can never produce them."""

    def __init__(self, words):
        words = list(words)
        if len(set(words)) != len(words):
            raise GrammarError("duplicate words in vocabulary")
        if PAD_WORD in words or UNK_WORD in words:
            raise GrammarError("pad/unk markers cannot be vocabulary words")
        self.words = words
        self.index_of = {w: i for i, w in enumerate(words)}
        self.pad_id = len(words)
        self.unk_id = len(words) + 1

    def __len__(self):
        return len(self.words)

    @property
    def table_rows(self) -> int:
        """Embedding rows needed: one per word plus pad and unk."""
        return len(self.words) + 2

    def id(self, word: str) -> int:
        try:
            return self.index_of[word]
        except KeyError:
            raise GrammarError(f"unknown word {word!r}") from None

    def word(self, idx: int) -> str:
        return self.words[idx]

    def save(self, path):
        with open(path, "w") as fh:
            for w in self.words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            words = [line.strip() for line in fh if line.strip()]
        return cls(words)


@dataclass(frozen=True)
class Slot:
    kind: str               # one of SLOT_TYPES
    group: str = "target"   # "target" or "anchor" (next-to neighbour)

    def __post_init__(self):
        if self.kind not in SLOT_TYPES:
            raise GrammarError(f"unknown slot type {self.kind!r}")
        if self.group not in ("target", "anchor"):
            raise GrammarError(f"unknown slot group {self.group!r}")

    @property
    def name(self) -> str:
        return self.kind if self.group == "target" else f"{self.group}:{self.kind}"


@dataclass(frozen=True)
class Template:
    """Instruction pattern: a tuple of literal strings and Slots."""

    pattern: tuple
    task_family: str
    multi_pick: bool = False

    def __post_init__(self):
        if self.task_family not in TASK_FAMILIES:
            raise GrammarError(f"unknown task family {self.task_family!r}")

    @property
    def slots(self) -> tuple:
        return tuple(p for p in self.pattern if isinstance(p, Slot))

    def __str__(self):
        return " ".join(f"<{p.name}>" if isinstance(p, Slot) else p
                        for p in self.pattern)


def parse_template(line: str, task_family: str, multi_pick: bool = False) -> Template:
    """Parse a pattern string with slot markers in angle brackets, e.g.
    "pick the <COLOUR> object next to the <anchor:COLOUR> object"."""
    parts = []
    for token in line.split():
        if token.startswith("<") and token.endswith(">"):
            inner = token[1:-1]
            if ":" in inner:
                group, kind = inner.split(":", 1)
            else:
                group, kind = "target", inner
            parts.append(Slot(kind, group))
        else:
            parts.append(token)
    if not parts:
        raise GrammarError("empty template")
    return Template(tuple(parts), task_family, multi_pick)


def load_templates(path, task_family: str):
    """Template file: one pattern per line, '#' comments allowed."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                out.append(parse_template(line, task_family))
    return out


@dataclass(frozen=True)
class Instruction:
    text: tuple                # words in order
    token_ids: tuple           # padded to length s
    slots: dict = field(hash=False)        # slot.name -> bound word
    slot_positions: tuple = ()             # indices into text that were slot-filled
    template: Template = None

    @property
    def string(self) -> str:
        return " ".join(self.text)


def instantiate(template: Template, bindings: dict, vocab: Vocabulary,
                max_len: int) -> Instruction:
    """Fill a template's slots from ``bindings`` (slot name -> word)."""
    words = []
    slots = {}
    slot_positions = []
    for part in template.pattern:
        if isinstance(part, Slot):
            if part.name not in bindings:
                raise GrammarError(f"unbound slot {part.name!r}")
            word = bindings[part.name]
            slot_positions.append(len(words))
            words.append(word)
            slots[part.name] = word
        else:
            words.append(part)
    for w in words:
        if w not in vocab.index_of:
            raise GrammarError(f"word {w!r} not in vocabulary")
    ids = tokenize(words, vocab, max_len)
    return Instruction(tuple(words), tuple(ids), slots,
                       tuple(slot_positions), template)


def tokenize(text, vocab: Vocabulary, s: int, eval_mode: bool = False):
    """Left-aligned ids, right-padded with pad_id to exactly ``s``."""
    if len(text) > s:
        raise GrammarError(f"instruction of {len(text)} words exceeds max length {s}")
    ids = []
    for w in text:
        if w in vocab.index_of:
            ids.append(vocab.index_of[w])
        elif eval_mode:
            ids.append(vocab.unk_id)
        else:
            raise GrammarError(f"unknown word {w!r} in training mode")
    ids.extend([vocab.pad_id] * (s - len(ids)))
    return ids


def detokenize(ids, vocab: Vocabulary):
    """Strip padding and map ids back to words."""
    words = []
    for i in ids:
        if i == vocab.pad_id:
            continue
        if i == vocab.unk_id:
            words.append(UNK_WORD)
        else:
            words.append(vocab.word(i))
    return tuple(words)


def meaningful_word(instruction: Instruction, vocab: Vocabulary,
                    rule: str = "rightmost") -> int:
    """The word-prediction target: by default the rightmost slot-filled word
    (the head noun in every shipped template)."""
    if not instruction.slot_positions:
        raise GrammarError("instruction contains only literals")
    if rule == "rightmost":
        pos = instruction.slot_positions[-1]
    else:
        raise GrammarError(f"unknown meaningful-word rule {rule!r}")
    return vocab.id(instruction.text[pos])


def _matches_attributes(obj_factors, slots: dict, prefix: str = "") -> bool:
    """Attribute slots of one group against an object's factors."""
    def get(kind):
        return slots.get(prefix + kind if prefix else kind)

    shape = get("SHAPE")
    if shape is not None and obj_factors.shape != shape:
        return False
    generic = get("GENERIC")
    if generic is not None and generic != GENERIC_WORD:
        return False  # GENERIC binds only the generic word
    colour = get("COLOUR")
    if colour is not None and obj_factors.colour != colour:
        return False
    pattern_word = get("PATTERN")
    if pattern_word is not None and obj_factors.pattern != WORD_TO_PATTERN[pattern_word]:
        return False
    shade = get("SHADE")
    if shade is not None and obj_factors.shade != shade:
        return False
    size = get("SIZE")
    if size is not None and obj_factors.size != size:
        return False
    return True


def satisfies(obj, episode_context, instruction: Instruction) -> bool:
    """True iff ``obj`` matches every slot of the instruction.

    ``episode_context`` provides the other objects (for relations and
    adjacency) and room lookup (for ROOMCOLOUR).  Relation slots require at
    least one comparison object.
    """
    slots = instruction.slots
    if not _matches_attributes(obj.factors, slots):
        return False

    relation = slots.get("RELATION")
    if relation is not None:
        others = [o for o in episode_context.objects if o is not obj]
        if not others:
            raise GrammarError("relation slot needs a comparison object")
        if relation not in RELATIONS:
            raise GrammarError(f"unknown relation {relation!r}")
        if relation in ("larger", "smaller"):
            mine = SIZE_RANK[obj.factors.size]
            ranks = [SIZE_RANK[o.factors.size] for o in others]
            if relation == "larger" and not all(mine > r for r in ranks):
                return False
            if relation == "smaller" and not all(mine < r for r in ranks):
                return False
        else:
            mine = SHADE_RANK[obj.factors.shade]
            ranks = [SHADE_RANK[o.factors.shade] for o in others]
            if relation == "lighter" and not all(mine > r for r in ranks):
                return False
            if relation == "darker" and not all(mine < r for r in ranks):
                return False

    room_colour = slots.get("ROOMCOLOUR")
    if room_colour is not None:
        room = episode_context.room_of(obj.cell)
        if room is None or room.floor_colour != room_colour:
            return False

    anchor_slots = {k.split(":", 1)[1]: v for k, v in slots.items()
                    if k.startswith("anchor:")}
    if anchor_slots:
        neighbours = [o for o in episode_context.objects
                      if o is not obj and _adjacent(o.cell, obj.cell)]
        if not any(_matches_attributes(n.factors, anchor_slots) for n in neighbours):
            return False

    return True


def _adjacent(a, b) -> bool:
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
