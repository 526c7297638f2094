import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langground import grammar, world
from langground.factors import COLOURS, SHAPES
from langground.grammar import (GrammarError, Template, Slot, Vocabulary,
                                detokenize, instantiate, meaningful_word,
                                parse_template, tokenize)


@pytest.fixture
def vocab():
    return Vocabulary(["pick", "the", "ladder", "pink", "striped", "dark",
                       "purple", "toothbrush", "larger", "object"])


def test_vocabulary_ids_dense(vocab):
    assert [vocab.id(w) for w in vocab.words] == list(range(len(vocab)))
    assert vocab.pad_id == len(vocab)
    assert vocab.unk_id == len(vocab) + 1
    assert vocab.pad_id != vocab.unk_id


def test_vocabulary_rejects_duplicates():
    with pytest.raises(GrammarError):
        Vocabulary(["a", "b", "a"])


def test_vocabulary_file_roundtrip(tmp_path, vocab):
    path = tmp_path / "words.txt"
    vocab.save(path)
    again = Vocabulary.load(path)
    assert again.words == vocab.words
    # line number is the id
    lines = path.read_text().splitlines()
    assert lines[vocab.id("ladder")] == "ladder"


def test_instantiate_single_slot(vocab):
    tpl = parse_template("pick the <SHAPE>", "Referring")
    instr = instantiate(tpl, {"SHAPE": "ladder"}, vocab, max_len=6)
    assert instr.string == "pick the ladder"
    assert instr.slots == {"SHAPE": "ladder"}


def test_instantiate_three_descriptors(vocab):
    tpl = parse_template("pick the <SHADE> <COLOUR> <SHAPE>", "Referring")
    instr = instantiate(tpl, {"SHADE": "dark", "COLOUR": "purple",
                              "SHAPE": "toothbrush"}, vocab, max_len=8)
    assert instr.string == "pick the dark purple toothbrush"


def test_instantiate_decode_roundtrip(vocab):
    tpl = parse_template("pick the <SHADE> <COLOUR> <SHAPE>", "Referring")
    instr = instantiate(tpl, {"SHADE": "dark", "COLOUR": "purple",
                              "SHAPE": "toothbrush"}, vocab, max_len=10)
    assert detokenize(instr.token_ids, vocab) == instr.text


def test_instantiate_unbound_slot(vocab):
    tpl = parse_template("pick the <SHAPE>", "Referring")
    with pytest.raises(GrammarError):
        instantiate(tpl, {}, vocab, max_len=6)


def test_instantiate_unknown_word(vocab):
    tpl = parse_template("pick the <SHAPE>", "Referring")
    with pytest.raises(GrammarError):
        instantiate(tpl, {"SHAPE": "zeppelin"}, vocab, max_len=6)


def test_tokenize_pads_right(vocab):
    ids = tokenize(["pick", "the", "ladder"], vocab, 6)
    assert ids == [vocab.id("pick"), vocab.id("the"), vocab.id("ladder"),
                   vocab.pad_id, vocab.pad_id, vocab.pad_id]


def test_tokenize_empty(vocab):
    assert tokenize([], vocab, 4) == [vocab.pad_id] * 4


def test_tokenize_overflow(vocab):
    with pytest.raises(GrammarError):
        tokenize(["pick"] * 7, vocab, 6)


def test_tokenize_unknown_word_modes(vocab):
    with pytest.raises(GrammarError):
        tokenize(["blimp"], vocab, 4)
    ids = tokenize(["blimp"], vocab, 4, eval_mode=True)
    assert ids[0] == vocab.unk_id


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["pick", "the", "ladder", "pink", "striped",
                                 "dark", "purple", "toothbrush", "larger",
                                 "object"]), max_size=10))
def test_tokenize_detokenize_roundtrip(words):
    vocab = Vocabulary(["pick", "the", "ladder", "pink", "striped", "dark",
                        "purple", "toothbrush", "larger", "object"])
    ids = tokenize(words, vocab, 10)
    assert len(ids) == 10
    assert detokenize(ids, vocab) == tuple(words)


def test_tokenize_roundtrip_sweep_generated_instructions():
    # tokenize o detokenize is the identity on generated instructions
    task = world.TaskTemplate(name="v59", family="Unigram")
    vocab = world.task_vocabulary(task)
    seen = set()
    for seed in range(2000):
        ep = world.sample_episode(task, None, seed)
        instr = ep.instruction
        assert detokenize(instr.token_ids, vocab) == instr.text
        seen.add(instr.text)
    assert len(seen) > 30


def test_tokenization_injective_on_instructions():
    task = world.TaskTemplate(name="ref", family="Referring")
    vocab = world.task_vocabulary(task)
    by_ids = {}
    for seed in range(1500):
        instr = world.sample_episode(task, None, seed).instruction
        key = tuple(instr.token_ids)
        if key in by_ids:
            assert by_ids[key] == instr.text
        by_ids[key] = instr.text


def test_meaningful_word_single_content(vocab):
    tpl = parse_template("pick the <SHAPE>", "Referring")
    instr = instantiate(tpl, {"SHAPE": "ladder"}, vocab, 6)
    assert meaningful_word(instr, vocab) == vocab.id("ladder")


def test_meaningful_word_rightmost_of_many(vocab):
    # head noun is the rightmost slot-filled word
    tpl = parse_template("pick the <PATTERN> <SHAPE>", "Referring")
    instr = instantiate(tpl, {"PATTERN": "striped", "SHAPE": "ladder"},
                        vocab, 6)
    assert meaningful_word(instr, vocab) == vocab.id("ladder")


def test_meaningful_word_unigram_relation(vocab):
    tpl = Template((Slot("RELATION"),), "Unigram")
    instr = instantiate(tpl, {"RELATION": "larger"}, vocab, 4)
    assert meaningful_word(instr, vocab) == vocab.id("larger")


def test_meaningful_word_literals_only(vocab):
    tpl = parse_template("pick the object", "Referring")
    instr = instantiate(tpl, {}, vocab, 4)
    with pytest.raises(GrammarError):
        meaningful_word(instr, vocab)


def test_template_roundtrip_string():
    tpl = parse_template(
        "pick the <COLOUR> object next to the <anchor:COLOUR> object",
        "NextTo")
    assert str(tpl) == ("pick the <COLOUR> object next to the "
                        "<anchor:COLOUR> object")


def test_template_file_loading(tmp_path):
    path = tmp_path / "templates.txt"
    path.write_text("# comment\npick the <SHAPE>\npick the <COLOUR> <SHAPE>\n")
    templates = grammar.load_templates(path, "Referring")
    assert len(templates) == 2
    assert templates[0].slots[0].kind == "SHAPE"


# -- predicate semantics ----------------------------------------------------


def _episode_with(factor_tuples, instruction_words, template_slots,
                  bindings):
    """Tiny hand-built episode context for satisfies()."""
    task = world.TaskTemplate(name="ref", family="Referring")
    words = list(dict.fromkeys(
        ["pick", "the", "object", "larger", "smaller", "lighter", "darker"]
        + [w for w in bindings.values()]
        + [p for p in template_slots if isinstance(p, str)]))
    vocab = Vocabulary(words)
    tpl = Template(tuple(template_slots), "Referring")
    instr = instantiate(tpl, bindings, vocab, 10)
    layout = world.generate_layout(
        np.random.Generator(np.random.PCG64(0)), task)
    objects = []
    cells = [(2, 2), (2, 4), (6, 6), (4, 2)]
    from langground.factors import ObjectFactors
    for i, f in enumerate(factor_tuples):
        objects.append(world.PlacedObject(ObjectFactors(*f), cells[i],
                                          room_index=0))
    return world.EpisodeSpec(layout=layout, objects=tuple(objects),
                             instruction=instr, agent_spawn=((5, 5), 0),
                             target_indices=(0,)), objects


def test_satisfies_full_attribute_match():
    ep, objs = _episode_with(
        [("ladder", "pink", "stripes", "neutral", "medium"),
         ("chair", "pink", "stripes", "neutral", "medium")],
        None,
        ("pick", "the", Slot("COLOUR"), Slot("PATTERN"), Slot("SHAPE")),
        {"COLOUR": "pink", "PATTERN": "striped", "SHAPE": "ladder"})
    assert grammar.satisfies(objs[0], ep, ep.instruction)
    assert not grammar.satisfies(objs[1], ep, ep.instruction)


def test_satisfies_colour_mismatch():
    ep, objs = _episode_with(
        [("ladder", "blue", "plain", "neutral", "medium")],
        None, ("pick", "the", Slot("COLOUR"), "object"), {"COLOUR": "red"})
    assert not grammar.satisfies(objs[0], ep, ep.instruction)


def test_satisfies_relation_larger():
    ep, objs = _episode_with(
        [("ladder", "blue", "plain", "neutral", "large"),
         ("ladder", "red", "plain", "neutral", "small")],
        None, (Slot("RELATION"),), {"RELATION": "larger"})
    assert grammar.satisfies(objs[0], ep, ep.instruction)
    assert not grammar.satisfies(objs[1], ep, ep.instruction)


def test_satisfies_relation_needs_comparison():
    ep, objs = _episode_with(
        [("ladder", "blue", "plain", "neutral", "large")],
        None, (Slot("RELATION"),), {"RELATION": "larger"})
    with pytest.raises(GrammarError):
        grammar.satisfies(objs[0], ep, ep.instruction)


def test_satisfies_generic_matches_any_shape():
    ep, objs = _episode_with(
        [("zebra", "red", "plain", "neutral", "medium"),
         ("zebra", "blue", "plain", "neutral", "medium")],
        None, ("pick", "the", Slot("COLOUR"), Slot("GENERIC")),
        {"COLOUR": "red", "GENERIC": "object"})
    assert grammar.satisfies(objs[0], ep, ep.instruction)
    assert not grammar.satisfies(objs[1], ep, ep.instruction)


def test_predicate_consistency_with_rewards():
    # satisfies() is true exactly for positively rewarded objects
    for family, split in (("Unigram", None), ("Referring", None)):
        task = world.TaskTemplate(name=family, family=family)
        for seed in range(400):
            ep = world.sample_episode(task, split, seed)
            for i, obj in enumerate(ep.objects):
                sat = grammar.satisfies(obj, ep, ep.instruction)
                assert sat == (obj.reward > 0), (family, seed, i)
