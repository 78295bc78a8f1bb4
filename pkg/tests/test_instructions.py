import numpy as np
import pytest
from hypothesis import given, strategies as st

from iral.env_scene import SceneEnv, SceneState, check_constraint
from iral.glyphs import synthetic_digits
from iral.instructions import (
    COLORS,
    SHAPES,
    SIZES,
    VOCAB,
    Constraint,
    EmptyInstruction,
    InvalidCount,
    ParseError,
    SourceMissing,
    all_constraints,
    build_dataset,
    detokenize,
    generate,
    make_instruction,
    mnist_grammar_enumerate,
    pad_tokens,
    parse_constraint,
    scene_grammar_enumerate,
    tokenize,
)

ALL_TEXTS = mnist_grammar_enumerate() + scene_grammar_enumerate()


def test_mnist_grammar():
    texts = mnist_grammar_enumerate()
    assert "Draw zero." in texts and "Paint 5." in texts
    assert len(texts) == 100 and len(set(texts)) == 100


def test_scene_grammar():
    texts = scene_grammar_enumerate()
    assert "There is a small sphere." in texts and "There is a red sphere." in texts
    assert len(texts) == 30 and len(set(texts)) == 30


def test_vocabulary_is_sorted_and_fixed():
    assert len(VOCAB) == 43
    assert VOCAB[:2] == ["<pad>", "<unk>"]
    assert VOCAB[2:] == sorted(VOCAB[2:])
    assert tokenize("Draw zero.") == [VOCAB.index("draw"), VOCAB.index("zero")] == [20, 42]


def test_tokenize_counts_and_errors():
    assert len(tokenize("There is a small sphere.")) == 5
    with pytest.raises(EmptyInstruction):
        tokenize("  . ")
    assert tokenize("Draw banana.")[1] == 1


@pytest.mark.parametrize("text", ALL_TEXTS)
def test_each_text_round_trips_through_tokens(text):
    assert detokenize(tokenize(text)) == text.lower().rstrip(".")
    assert make_instruction(text).tokens == tokenize(text)


def test_parse_examples():
    assert parse_constraint("Paint 5.") == Constraint("mnist", class_label=5)
    assert parse_constraint("Add seven.") == Constraint("mnist", class_label=7)
    assert parse_constraint("There is a small sphere.") == Constraint("scene", shape="sphere", size="small")
    for bad in ("Draw 12.", "There is a red sphere", "There is a red small sphere.", "draw 5."):
        with pytest.raises(ParseError):
            parse_constraint(bad)


@pytest.mark.parametrize("domain", ["mnist", "scene"])
def test_generate_parse_round_trip(domain):
    cs = all_constraints(domain)
    assert len(cs) == (10 if domain == "mnist" else 30)
    for c in cs:
        assert parse_constraint(generate(c)) == c
        assert parse_constraint(generate(c, "Put", numeral=False)) == c


def test_scene_constraint_fixes_exactly_one_attribute():
    with pytest.raises(ValueError):
        Constraint("scene", shape="cube", color="red", size="small")
    with pytest.raises(ValueError):
        Constraint("scene", shape="cube")
    assert Constraint("scene", shape="cube", color="red").free_attribute == "size"
    assert Constraint("scene", shape="cube", size="large").free_attribute == "color"


@given(st.lists(st.sampled_from(ALL_TEXTS), min_size=1, max_size=6))
def test_pad_tokens_keeps_prefixes(texts):
    seqs = [tokenize(t) for t in texts]
    arr = pad_tokens(seqs)
    for row, s in zip(arr, seqs):
        assert list(row[:len(s)]) == s and not row[len(s):].any()


def test_build_dataset_errors():
    with pytest.raises(InvalidCount):
        build_dataset("scene", 0, 0, SceneEnv(8))
    with pytest.raises(SourceMissing):
        build_dataset("scene", 5, 0, None)


def test_scene_dataset_records_satisfy_their_instruction():
    env = SceneEnv(32)
    ds = build_dataset("scene", 2000, 3, env)
    for r in ds.records:
        c = parse_constraint(r.instruction)
        assert c == r.constraint
        assert check_constraint(SceneState((r.goal,), 1), c)
    assert sum(ds.counts.values()) == 2000 and len(ds.counts) == 30


def test_mnist_dataset_labels_match_images():
    digits = synthetic_digits(50, 0)
    ds = build_dataset("mnist", 120, 5, digits)
    for r in ds.records:
        assert digits.labels[r.goal] == r.constraint.class_label
    # every image is used before any repeats
    assert len({r.goal for r in ds.records[:50]}) == 50


def test_dataset_is_deterministic_and_prefix_stable():
    env = SceneEnv(8)
    a = build_dataset("scene", 300, 11, env)
    b = build_dataset("scene", 100, 11, env)
    assert a.records[:100] == b.records
    assert build_dataset("scene", 100, 12, env).records != b.records


@pytest.mark.slow
def test_full_scale_dataset_sizes():
    assert len(build_dataset("scene", 32318, 0, SceneEnv(32))) == 32318
    assert len(build_dataset("mnist", 60000, 0, synthetic_digits(600, 0))) == 60000
