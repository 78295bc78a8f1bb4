"""Templated instructions for both domains, tokenization, and parsing back into
machine-checkable constraints."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

MNIST_VERBS = ("Draw", "Put", "Paint", "Add", "Create")
DIGIT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
SHAPES = ("cube", "sphere", "cylinder")
SIZES = ("small", "large")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")

PAD, UNK = "<pad>", "<unk>"


class EmptyInstruction(ValueError):
    pass


class ParseError(ValueError):
    pass


class InvalidCount(ValueError):
    pass


class SourceMissing(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    domain: str
    class_label: Optional[int] = None
    shape: Optional[str] = None
    color: Optional[str] = None
    size: Optional[str] = None

    def __post_init__(self):
        if self.domain == "mnist":
            if self.class_label not in range(10) or any((self.shape, self.color, self.size)):
                raise ValueError(f"bad mnist constraint {self}")
        elif self.domain == "scene":
            if self.shape not in SHAPES or self.class_label is not None:
                raise ValueError(f"bad scene constraint {self}")
            if (self.color is None) == (self.size is None):
                raise ValueError("scene constraint must fix exactly one of color/size")
            if self.color is not None and self.color not in COLORS:
                raise ValueError(f"unknown color {self.color}")
            if self.size is not None and self.size not in SIZES:
                raise ValueError(f"unknown size {self.size}")
        else:
            raise ValueError(f"unknown domain {self.domain}")

    @property
    def free_attribute(self) -> Optional[str]:
        """The attribute left unspecified (the diversity axis) for scene constraints."""
        if self.domain != "scene":
            return None
        return "size" if self.color is not None else "color"


@dataclass
class Instruction:
    text: str
    tokens: List[int]
    domain: str


def mnist_grammar_enumerate() -> List[str]:
    out = []
    for verb in MNIST_VERBS:
        for d in range(10):
            out.append(f"{verb} {d}.")
            out.append(f"{verb} {DIGIT_WORDS[d]}.")
    return out


def scene_grammar_enumerate() -> List[str]:
    return [f"There is a {attr} {shape}." for attr in COLORS + SIZES for shape in SHAPES]


def _words(text: str) -> List[str]:
    return re.sub(r"[^\w\s]", " ", text.lower()).split()


def _build_vocab():
    words = set()
    for s in mnist_grammar_enumerate() + scene_grammar_enumerate():
        words.update(_words(s))
    itos = [PAD, UNK] + sorted(words)
    return itos, {w: i for i, w in enumerate(itos)}


VOCAB, _STOI = _build_vocab()
PAD_ID, UNK_ID = 0, 1


def tokenize(text: str) -> List[int]:
    words = _words(text)
    if not words:
        raise EmptyInstruction("instruction has no tokens")
    return [_STOI.get(w, UNK_ID) for w in words]


def detokenize(ids: Sequence[int]) -> str:
    return " ".join(VOCAB[i] for i in ids if i != PAD_ID)


def make_instruction(text: str) -> Instruction:
    c = parse_constraint(text)
    return Instruction(text=text, tokens=tokenize(text), domain=c.domain)


def pad_tokens(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    """Right-pad token sequences with PAD_ID into an int array (B, L)."""
    length = max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


_MNIST_RE = re.compile(r"^(%s) (\d|%s)\.$" % ("|".join(MNIST_VERBS), "|".join(DIGIT_WORDS)))
_SCENE_RE = re.compile(r"^There is a (%s) (%s)\.$" % ("|".join(COLORS + SIZES), "|".join(SHAPES)))


def parse_constraint(text: str) -> Constraint:
    m = _MNIST_RE.match(text)
    if m:
        lab = m.group(2)
        return Constraint("mnist", class_label=int(lab) if lab.isdigit() else DIGIT_WORDS.index(lab))
    m = _SCENE_RE.match(text)
    if m:
        attr, shape = m.groups()
        if attr in COLORS:
            return Constraint("scene", shape=shape, color=attr)
        return Constraint("scene", shape=shape, size=attr)
    raise ParseError(f"not a grammar instruction: {text!r}")


def generate(c: Constraint, verb: str = "Draw", numeral: bool = True) -> str:
    """Instantiate a template for ``c`` (the inverse of ``parse_constraint``)."""
    if c.domain == "mnist":
        label = str(c.class_label) if numeral else DIGIT_WORDS[c.class_label]
        return f"{verb} {label}."
    return f"There is a {c.color or c.size} {c.shape}."


def all_constraints(domain: str) -> List[Constraint]:
    texts = mnist_grammar_enumerate() if domain == "mnist" else scene_grammar_enumerate()
    seen, out = set(), []
    for t in texts:
        c = parse_constraint(t)
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


# -- datasets ---------------------------------------------------------------

@dataclass
class Record:
    instruction: str
    constraint: Constraint
    goal: object  # mnist: int index into the digit source; scene: SceneObject


@dataclass
class Dataset:
    domain: str
    seed: int
    records: List[Record]
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Per-record generator so that building can be sharded by index."""
    return np.random.default_rng([seed, index])


def build_dataset(domain: str, count: int, seed: int, image_source=None) -> Dataset:
    """Sample ``count`` (instruction, goal) records deterministically from ``seed``.

    mnist: images are visited in a seeded order (one instruction per image,
    cycling if ``count`` exceeds the source); each gets a random template for
    its own label. ``image_source`` needs a ``labels`` array.

    scene: an instruction is drawn uniformly from the 30 templates, then the
    free attribute and the grid location uniformly. ``image_source`` is the
    scene environment (it fixes the location grid and renders goals).
    """
    if count <= 0:
        raise InvalidCount(f"count must be positive, got {count}")
    if image_source is None:
        raise SourceMissing(f"{domain} dataset needs an image source")
    records: List[Record] = []
    if domain == "mnist":
        labels = np.asarray(image_source.labels)
        if len(labels) == 0:
            raise SourceMissing("digit source is empty")
        order = np.random.default_rng([seed, 2**31]).permutation(len(labels))
        for i in range(count):
            rng = record_rng(seed, i)
            idx = int(order[i % len(order)])
            verb = MNIST_VERBS[int(rng.integers(len(MNIST_VERBS)))]
            numeral = bool(rng.integers(2))
            c = Constraint("mnist", class_label=int(labels[idx]))
            records.append(Record(generate(c, verb, numeral), c, idx))
    elif domain == "scene":
        from .env_scene import SceneObject

        texts = scene_grammar_enumerate()
        cells = image_source.grid * image_source.grid
        for i in range(count):
            rng = record_rng(seed, i)
            text = texts[int(rng.integers(len(texts)))]
            c = parse_constraint(text)
            color = c.color or COLORS[int(rng.integers(len(COLORS)))]
            size = c.size or SIZES[int(rng.integers(len(SIZES)))]
            loc = int(rng.integers(cells))
            records.append(Record(text, c, SceneObject(c.shape, size, color, loc)))
    else:
        raise ValueError(f"unknown domain {domain}")
    counts: dict = {}
    for r in records:
        counts[r.instruction] = counts.get(r.instruction, 0) + 1
    return Dataset(domain, seed, records, counts)
