"""Object factor inventory: the fixed pools every sampled object draws from.

Each object is described by five factors (shape, colour, pattern, shade,
size).  Multi-word shape names are written with underscores so that every
factor value is a single instruction token.
"""

from __future__ import annotations

from dataclasses import dataclass

SHAPES = (
    "tv", "ball", "balloon", "cake", "can", "cassette", "chair", "guitar",
    "hairbrush", "hat", "ice_lolly", "ladder", "mug", "pencil", "suitcase",
    "toothbrush", "key", "bottle", "car", "cherries", "fork", "fridge",
    "hammer", "knife", "spoon", "apple", "banana", "cow", "flower", "jug",
    "pig", "pincer", "plant", "saxophone", "shoe", "tennis_racket", "tomato",
    "tree", "wine_glass", "zebra",
)

COLOURS = (
    "red", "blue", "white", "grey", "cyan", "pink", "orange", "black",
    "green", "magenta", "brown", "purple", "yellow",
)

PATTERNS = (
    "plain", "chequered", "crosses", "stripes", "discs", "hex", "pinstripe",
    "spots", "swirls",
)

SHADES = ("light", "dark", "neutral")

SIZES = ("small", "large", "medium")

FACTOR_POOLS = {
    "shape": SHAPES,
    "colour": COLOURS,
    "pattern": PATTERNS,
    "shade": SHADES,
    "size": SIZES,
}

# Instruction word for each pattern.  The stripes and spots patterns are
# referred to adjectivally; the rest keep their inventory name.
PATTERN_WORDS = {
    "plain": "plain",
    "chequered": "chequered",
    "crosses": "crossed",
    "stripes": "striped",
    "discs": "disced",
    "hex": "hexed",
    "pinstripe": "pinstriped",
    "spots": "spotted",
    "swirls": "swirled",
}
WORD_TO_PATTERN = {w: p for p, w in PATTERN_WORDS.items()}

# Relations usable as unigram instructions.  Each compares one factor
# against the other objects in the episode.
RELATIONS = ("larger", "smaller", "lighter", "darker")

# Rank orders used by the relation predicates.
SIZE_RANK = {"small": 0, "medium": 1, "large": 2}
SHADE_RANK = {"dark": 0, "neutral": 1, "light": 2}

GENERIC_WORD = "object"


@dataclass(frozen=True)
class ObjectFactors:
    """Five-factor description of a single object."""

    shape: str
    colour: str
    pattern: str
    shade: str
    size: str

    def __post_init__(self):
        for field, pool in FACTOR_POOLS.items():
            value = getattr(self, field)
            if value not in pool:
                raise ValueError(f"unknown {field} value {value!r}")

    def bigram(self) -> tuple[str, str]:
        return (self.colour, self.shape)
