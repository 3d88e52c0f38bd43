"""Tokenisation, vocabulary and BIO tagging."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .errors import AnnotationError, SequenceLengthError
from .schema import ENTITY_TYPES

_TOKEN_RE = re.compile(r"[^\W_]+|\S")

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_MAX_LENGTH = 128


class Token(NamedTuple):
    text: str
    start: int
    end: int


def tokenize(raw_text: str) -> list[Token]:
    """Split on whitespace; alphanumeric runs stay whole, any other character stands alone."""
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(raw_text)]


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int  # inclusive
    entity_type: str

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise AnnotationError(f"bad span bounds {self.start}..{self.end}")

    @property
    def length(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class RelationInstance:
    """A labelled pair of spans; ``first`` precedes ``second`` in the text."""
    first: EntitySpan
    second: EntitySpan
    label: str


class Vocabulary:
    def __init__(self, tokens=(), lowercase=True, min_freq=2):
        self.lowercase = lowercase
        self.min_freq = min_freq
        self.itos = [PAD_TOKEN, UNK_TOKEN] + [t for t in tokens if t not in (PAD_TOKEN, UNK_TOKEN)]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, token_lists, min_freq=2, lowercase=True):
        counts = Counter()
        for toks in token_lists:
            counts.update(t.lower() if lowercase else t for t in toks)
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept, lowercase=lowercase, min_freq=min_freq)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.lowercase == other.lowercase

    def lookup(self, token: str) -> int:
        if self.lowercase:
            token = token.lower()
        return self.stoi.get(token, UNK)

    def encode(self, tokens) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.itos)

    @classmethod
    def from_text(cls, text, lowercase=True):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if lines[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary file must start with the <pad> and <unk> lines")
        return cls(lines[2:], lowercase=lowercase)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path, lowercase=True):
        with open(path, encoding="utf-8", newline="\n") as fh:
            return cls.from_text(fh.read(), lowercase=lowercase)


@dataclass(frozen=True)
class Sentence:
    raw_text: str
    tokens: tuple
    char_offsets: tuple
    token_ids: tuple = ()
    gold_entities: Optional[tuple] = None
    gold_relations: Optional[tuple] = None
    sent_id: str = ""

    def __post_init__(self):
        if self.token_ids and len(self.token_ids) != len(self.tokens):
            raise ValueError("token_ids and tokens differ in length")
        prev_end = -1
        for s, e in self.char_offsets:
            if s < prev_end or e <= s:
                raise ValueError(f"char offsets not strictly increasing at ({s},{e})")
            prev_end = e
        for span in self.gold_entities or ():
            if span.end >= len(self.tokens):
                raise AnnotationError(f"{self.sent_id}: span {span} past sentence end {len(self.tokens)}")

    def __len__(self):
        return len(self.tokens)

    def with_ids(self, vocab: Vocabulary) -> "Sentence":
        return Sentence(self.raw_text, self.tokens, self.char_offsets, tuple(vocab.encode(self.tokens)),
                        self.gold_entities, self.gold_relations, self.sent_id)


def make_sentence(raw_text, vocab=None, entities=None, relations=None, sent_id="",
                  max_length=DEFAULT_MAX_LENGTH) -> Sentence:
    toks = tokenize(raw_text)
    if len(toks) > max_length:
        raise SequenceLengthError(f"{sent_id or 'sentence'}: {len(toks)} tokens exceeds max length {max_length}")
    words = tuple(t.text for t in toks)
    ids = tuple(vocab.encode(words)) if vocab is not None else ()
    return Sentence(raw_text, words, tuple((t.start, t.end) for t in toks), ids,
                    None if entities is None else tuple(sorted(entities)),
                    None if relations is None else tuple(relations), sent_id)


class TagSet:
    """BIO alphabet: ``O`` first, then ``B-t``/``I-t`` per entity type."""

    def __init__(self, entity_types=ENTITY_TYPES):
        self.entity_types = tuple(entity_types)
        self.tags = ["O"] + [f"{p}-{t}" for t in self.entity_types for p in ("B", "I")]
        self.index = {t: i for i, t in enumerate(self.tags)}

    def __len__(self):
        return len(self.tags)

    def encode(self, tags):
        return [self.index[t] for t in tags]

    def decode(self, ids):
        return [self.tags[i] for i in ids]


def check_non_overlapping(spans):
    ordered = sorted(spans)
    collisions = [(a, b) for a, b in zip(ordered, ordered[1:]) if b.start <= a.end]
    if collisions:
        desc = "; ".join(f"{a} overlaps {b}" for a, b in collisions)
        raise AnnotationError(f"overlapping entity spans: {desc}")


def encode_bio(n_tokens, spans) -> list[str]:
    """Tag a sentence of ``n_tokens`` (or a Sentence) with its spans."""
    if isinstance(n_tokens, Sentence):
        n_tokens = len(n_tokens)
    check_non_overlapping(spans)
    tags = ["O"] * n_tokens
    for sp in spans:
        if sp.end >= n_tokens:
            raise AnnotationError(f"span {sp} past sentence end {n_tokens}")
        tags[sp.start] = f"B-{sp.entity_type}"
        for i in range(sp.start + 1, sp.end + 1):
            tags[i] = f"I-{sp.entity_type}"
    return tags


def decode_spans(tags) -> list[EntitySpan]:
    """Read spans back from BIO tags.

    Ill-formed input is repaired rather than rejected: an ``I-t`` with no open
    span of type t starts a new span, and a type switch closes the open span.
    """
    spans = []
    start = kind = None
    for i, tag in enumerate(tags):
        prefix, _, etype = tag.partition("-")
        if prefix == "I" and kind == etype:
            continue
        if kind is not None:
            spans.append(EntitySpan(start, i - 1, kind))
            start = kind = None
        if prefix in ("B", "I"):
            start, kind = i, etype
    if kind is not None:
        spans.append(EntitySpan(start, len(tags) - 1, kind))
    return spans
