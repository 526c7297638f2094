"""Train/test split construction for the generalisation experiments.

A SplitConstraints value carries both the training pools and the held-out
test pools; ``role`` selects which side episode sampling draws from.
Training-side sampling never instantiates a held-out instruction, and
confounding objects never realise a held-out colour-shape bigram.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .factors import COLOURS, SHAPES

EXPERIMENTS = (
    "composition", "decomposition", "relative_size", "relative_shade",
    "vocab59", "wordspeed20",
)

# Held-out factor values for the colour-shape composition experiments.
COMPOSITION_TEST_SHAPES = ("ice_lolly", "ladder", "mug", "pencil", "suitcase")
COMPOSITION_TEST_COLOURS = ("red", "magenta", "grey", "purple")

# Relative-size split: shapes whose size varies.
RELSIZE_TRAIN_SHAPES = ("tv", "ball", "balloon", "cake", "can", "cassette",
                        "chair", "guitar", "hairbrush", "hat")
RELSIZE_TEST_SHAPES = ("ice_lolly", "ladder", "mug", "pencil", "toothbrush")

# Relative-shade split: colour pools.
RELSHADE_TRAIN_COLOURS = ("green", "blue", "cyan", "yellow", "pink", "brown",
                          "orange")
RELSHADE_TEST_COLOURS = ("red", "magenta", "grey", "purple")

# Word-learning-speed experiment: the 20 target shape words, the 20
# remaining shapes used for heavy pretraining, and the minimal 2-word
# pretraining pool.
WORDSPEED_TARGET_SHAPES = (
    "banana", "cherries", "cow", "flower", "fork", "fridge", "hammer", "jug",
    "knife", "pig", "pincer", "plant", "saxophone", "shoe", "spoon",
    "tennis_racket", "tomato", "tree", "wine_glass", "zebra",
)
WORDSPEED_PRETRAIN_SHAPES = tuple(s for s in SHAPES
                                  if s not in WORDSPEED_TARGET_SHAPES)
WORDSPEED_PRETRAIN_2 = ("ball", "tv")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConstraints:
    name: str = "none"
    role: str = "train"                     # "train" or "test"
    # Unigram-family instruction pools
    train_unigrams: tuple | None = None
    test_unigrams: tuple | None = None
    # Bigram-family instruction pools: entries ("colour", c) | ("shape", s)
    # | ("bigram", c, s)
    train_instructions: tuple | None = None
    test_instructions: tuple | None = None
    # Bigram sets used for object-level constraints
    test_bigrams: tuple = ()
    # Factor pool restrictions for object sampling
    train_shapes: tuple | None = None
    test_shapes: tuple | None = None
    train_colours: tuple | None = None
    test_colours: tuple | None = None
    # Whether confounders may realise held-out items (defaults to the role)
    confounder_from_test: bool | None = None

    def __post_init__(self):
        if self.role not in ("train", "test"):
            raise SplitError(f"unknown role {self.role!r}")

    def as_role(self, role: str) -> "SplitConstraints":
        return replace(self, role=role)

    def as_test(self) -> "SplitConstraints":
        return self.as_role("test")

    def active_unigrams(self):
        if self.role == "train":
            return self.train_unigrams
        return self.test_unigrams if self.test_unigrams is not None \
            else self.train_unigrams

    def active_instructions(self):
        if self.role == "train":
            return self.train_instructions
        return self.test_instructions

    def active_factors(self, which: str):
        return getattr(self, f"{self.role}_{which}")

    def banned_bigrams(self) -> frozenset:
        allow_test = self.confounder_from_test
        if allow_test is None:
            allow_test = self.role == "test"
        if allow_test:
            return frozenset()
        return frozenset(self.test_bigrams)

    def required_bigrams(self):
        """In test role both objects must realise held-out bigrams."""
        if self.role == "test" and self.test_bigrams:
            return frozenset(self.test_bigrams)
        return None


NO_SPLIT = SplitConstraints()


def make_composition_split(colours, shapes, test_bigrams, name="composition",
                           with_unigrams=True) -> SplitConstraints:
    """Composition split over explicit pools: train on all unigrams (when
    enabled) plus every bigram outside ``test_bigrams``."""
    test_bigrams = tuple(test_bigrams)
    for c, s in test_bigrams:
        if c not in colours or s not in shapes:
            raise SplitError(f"test bigram ({c}, {s}) outside the pools")
    train = []
    if with_unigrams:
        train += [("colour", c) for c in colours]
        train += [("shape", s) for s in shapes]
    held = set(test_bigrams)
    train += [("bigram", c, s) for c in colours for s in shapes
              if (c, s) not in held]
    test = tuple(("bigram", c, s) for c, s in test_bigrams)
    if not train or not test:
        raise SplitError("composition split needs non-empty train and test sets")
    return SplitConstraints(
        name=name,
        train_instructions=tuple(train),
        test_instructions=test,
        test_bigrams=test_bigrams,
    )


def sample_held_out_bigrams(colours, shapes, fraction: float, seed: int):
    """Uniformly hold out ``fraction`` of the colour x shape bigrams."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    all_bigrams = [(c, s) for c in colours for s in shapes]
    n_test = max(1, round(fraction * len(all_bigrams)))
    idx = rng.choice(len(all_bigrams), size=n_test, replace=False)
    return tuple(all_bigrams[i] for i in sorted(idx))


def build_split(experiment: str) -> SplitConstraints:
    if experiment in ("composition", "decomposition"):
        held = tuple((c, s) for c in COLOURS for s in SHAPES
                     if c in COMPOSITION_TEST_COLOURS
                     or s in COMPOSITION_TEST_SHAPES)
        return make_composition_split(
            COLOURS, SHAPES, held, name=experiment,
            with_unigrams=(experiment == "composition"))
    if experiment == "relative_size":
        return SplitConstraints(
            name=experiment,
            train_unigrams=("larger", "smaller"),
            train_shapes=RELSIZE_TRAIN_SHAPES,
            test_shapes=RELSIZE_TEST_SHAPES,
        )
    if experiment == "relative_shade":
        return SplitConstraints(
            name=experiment,
            train_unigrams=("lighter", "darker"),
            train_colours=RELSHADE_TRAIN_COLOURS,
            test_colours=RELSHADE_TEST_COLOURS,
        )
    if experiment == "vocab59":
        return SplitConstraints(name=experiment)   # full unigram pool, no test
    if experiment == "wordspeed20":
        return SplitConstraints(
            name=experiment,
            train_unigrams=WORDSPEED_TARGET_SHAPES,
        )
    raise SplitError(f"unknown experiment {experiment!r}")


def pretrain_split(condition: str) -> SplitConstraints:
    """Pretraining pools for the word-learning-speed conditions."""
    if condition == "pre2":
        return SplitConstraints(name="wordspeed20_pre2",
                                train_unigrams=WORDSPEED_PRETRAIN_2)
    if condition == "pre20":
        return SplitConstraints(name="wordspeed20_pre20",
                                train_unigrams=WORDSPEED_PRETRAIN_SHAPES)
    raise SplitError(f"unknown pretraining condition {condition!r}")


def leakage_events(episode, constraints: SplitConstraints):
    """Brute-force leakage check of one training episode against the held-out
    pools.  Returns a list of violation descriptions (empty = clean)."""
    events = []
    if constraints.role != "train":
        return events
    test_instrs = set(constraints.test_instructions or ())
    test_unigrams = set(constraints.test_unigrams or ())
    slots = episode.instruction.slots
    if "COLOUR" in slots and "SHAPE" in slots:
        item = ("bigram", slots["COLOUR"], slots["SHAPE"])
        if item in test_instrs:
            events.append(f"training instruction {item} is held out")
    elif len(slots) == 1:
        word = next(iter(slots.values()))
        if word in test_unigrams:
            events.append(f"training unigram {word!r} is held out")
        for kind, label in (("colour", "COLOUR"), ("shape", "SHAPE")):
            if (kind, slots.get(label)) in test_instrs:
                events.append(f"training unigram {word!r} is held out")
    held_bigrams = set(constraints.test_bigrams)
    target_set = set(episode.target_indices)
    for i, obj in enumerate(episode.objects):
        if i in target_set:
            continue
        if held_bigrams and obj.factors.bigram() in held_bigrams:
            events.append(f"confounder {obj.factors.bigram()} is a held-out bigram")
    for which, attr in (("shapes", "shape"), ("colours", "colour")):
        test_pool = getattr(constraints, f"test_{which}")
        train_pool = getattr(constraints, f"train_{which}")
        if test_pool and train_pool:
            for obj in episode.objects:
                if getattr(obj.factors, attr) in test_pool:
                    events.append(
                        f"object {attr} {getattr(obj.factors, attr)!r} is held out")
    return events
