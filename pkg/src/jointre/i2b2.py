"""Reader/writer for i2b2-2010 style ``.txt``/``.con``/``.rel`` triples.

Coordinates are ``line:token`` with 1-indexed lines and 0-indexed
whitespace tokens, e.g.::

    c="chest pain" 3:1 3:2||t="problem"
    c="ct scan" 4:0 4:1||r="TeRP"||c="a mass" 4:3 4:4

The model works on ``text.tokenize`` tokens, which split punctuation that
whitespace tokenisation keeps attached; ``document_to_sentences`` and
``sentence_predictions_to_annotations`` translate between the two.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import AnnotationError, ParseError, ValidationError
from .schema import DEFAULT_SCHEMA, RelationSchema
from .text import DEFAULT_MAX_LENGTH, EntitySpan, RelationInstance, make_sentence, tokenize

log = logging.getLogger(__name__)

_CONCEPT_RE = re.compile(r'^c="(.*)" (\d+):(\d+) (\d+):(\d+)\|\|t="([^"]*)"$')
_RELATION_RE = re.compile(
    r'^c="(.*?)" (\d+):(\d+) (\d+):(\d+)\|\|r="([^"]*)"\|\|c="(.*)" (\d+):(\d+) (\d+):(\d+)$')


@dataclass(frozen=True, order=True)
class Concept:
    line: int
    start: int  # whitespace token index, inclusive
    end: int
    entity_type: str
    text: str

    @property
    def key(self):
        return (self.line, self.start, self.end)


@dataclass(frozen=True, order=True)
class StandoffRelation:
    first: Concept
    second: Concept
    label: str


@dataclass(frozen=True)
class StandoffDocument:
    doc_id: str
    lines: tuple
    concepts: tuple = ()
    relations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "concepts", tuple(sorted(self.concepts)))
        object.__setattr__(self, "relations", tuple(sorted(
            self.relations, key=lambda r: (r.first.key, r.second.key, r.label))))


def _ws_tokens(line):
    return line.split()


def _split_lines(text):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _norm(text):
    return " ".join(text.lower().split())


def _check_concept(c, lines, schema, where):
    if not 1 <= c.line <= len(lines):
        raise ValidationError(f"{where}: line {c.line} outside document of {len(lines)} lines")
    words = _ws_tokens(lines[c.line - 1])
    if not 0 <= c.start <= c.end < len(words):
        raise ValidationError(
            f"{where}: tokens {c.start}..{c.end} outside line {c.line} of {len(words)} tokens")
    if c.entity_type not in schema.entity_types:
        raise ValidationError(f"{where}: unknown concept type {c.entity_type!r}")
    actual = " ".join(words[c.start:c.end + 1])
    if _norm(actual) != _norm(c.text):
        raise ValidationError(f"{where}: concept text {c.text!r} does not match document text {actual!r}")


def parse_concepts(con_text, document_text, schema: RelationSchema = DEFAULT_SCHEMA):
    lines = _split_lines(document_text) if isinstance(document_text, str) else list(document_text)
    out = []
    for n, raw in enumerate(con_text.splitlines(), start=1):
        if not raw.strip():
            continue
        m = _CONCEPT_RE.match(raw.strip())
        if not m:
            raise ParseError(f"malformed concept line {raw!r}", n)
        text, l1, t1, l2, t2, ctype = m.groups()
        if l1 != l2:
            raise ValidationError(f"line {n}: concept spans lines {l1}..{l2}")
        c = Concept(int(l1), int(t1), int(t2), ctype, text)
        _check_concept(c, lines, schema, f"concept line {n}")
        out.append(c)
    return out


def _check_relation(rel, schema, where):
    try:
        fam = schema.family_of_label(rel.label)
    except KeyError:
        raise ValidationError(f"{where}: unknown relation label {rel.label!r}") from None
    if (rel.first.entity_type, rel.second.entity_type) != (fam.first_type, fam.second_type):
        raise ValidationError(
            f"{where}: {rel.label} needs ({fam.first_type}, {fam.second_type}) arguments, "
            f"got ({rel.first.entity_type}, {rel.second.entity_type})")
    if rel.first.line != rel.second.line:
        raise ValidationError(
            f"{where}: cross-sentence relation between lines {rel.first.line} and {rel.second.line}")


def parse_relations(rel_text, concepts, schema: RelationSchema = DEFAULT_SCHEMA):
    by_key = {c.key: c for c in concepts}
    out = []
    seen = {}
    for n, raw in enumerate(rel_text.splitlines(), start=1):
        if not raw.strip():
            continue
        m = _RELATION_RE.match(raw.strip())
        if not m:
            raise ParseError(f"malformed relation line {raw!r}", n)
        g = m.groups()
        ends = []
        for text, l1, t1, l2, t2 in (g[0:5], g[6:11]):
            key = (int(l1), int(t1), int(t2))
            c = by_key.get(key)
            if c is None or int(l1) != int(l2) or _norm(c.text) != _norm(text):
                raise ValidationError(f"relation line {n}: no concept {text!r} at {l1}:{t1} {l2}:{t2}")
            ends.append(c)
        rel = StandoffRelation(ends[0], ends[1], g[5])
        _check_relation(rel, schema, f"relation line {n}")
        pair = (rel.first.key, rel.second.key)
        if pair in seen:
            if seen[pair] != rel.label:
                raise ValidationError(
                    f"relation line {n}: pair already labelled {seen[pair]!r}, now {rel.label!r}")
            log.warning("relation line %d: duplicate %s relation dropped", n, rel.label)
            continue
        seen[pair] = rel.label
        out.append(rel)
    return out


def parse_document(doc_id, txt, con="", rel="", schema: RelationSchema = DEFAULT_SCHEMA):
    lines = _split_lines(txt)
    concepts = parse_concepts(con, lines, schema)
    relations = parse_relations(rel, concepts, schema)
    return StandoffDocument(doc_id, tuple(lines), tuple(concepts), tuple(relations))


def validate_document(doc: StandoffDocument, schema: RelationSchema = DEFAULT_SCHEMA):
    for c in doc.concepts:
        _check_concept(c, doc.lines, schema, doc.doc_id)
    keys = {c.key: c for c in doc.concepts}
    pairs = set()
    for r in doc.relations:
        if keys.get(r.first.key) != r.first or keys.get(r.second.key) != r.second:
            raise ValidationError(f"{doc.doc_id}: relation {r.label} refers to an unknown concept")
        _check_relation(r, schema, doc.doc_id)
        if (r.first.key, r.second.key) in pairs:
            raise ValidationError(f"{doc.doc_id}: two labels for one concept pair")
        pairs.add((r.first.key, r.second.key))


def format_concept(c: Concept):
    return f'c="{c.text}" {c.line}:{c.start} {c.line}:{c.end}||t="{c.entity_type}"'


def format_relation(r: StandoffRelation):
    a, b = r.first, r.second
    return (f'c="{a.text}" {a.line}:{a.start} {a.line}:{a.end}||r="{r.label}"||'
            f'c="{b.text}" {b.line}:{b.start} {b.line}:{b.end}')


def serialize(doc: StandoffDocument, schema: RelationSchema = DEFAULT_SCHEMA):
    """Return ``(txt, con, rel)`` file contents in canonical order."""
    validate_document(doc, schema)
    txt = "".join(line + "\n" for line in doc.lines)
    con = "".join(format_concept(c) + "\n" for c in doc.concepts)
    rel = "".join(format_relation(r) + "\n" for r in doc.relations)
    return txt, con, rel


def write_document(doc, out_dir, schema: RelationSchema = DEFAULT_SCHEMA):
    txt, con, rel = serialize(doc, schema)
    os.makedirs(out_dir, exist_ok=True)
    for ext, body in (("txt", txt), ("con", con), ("rel", rel)):
        with open(os.path.join(out_dir, f"{doc.doc_id}.{ext}"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(body)


def _read(path):
    if not os.path.exists(path):
        return ""
    with open(path, encoding="utf-8", newline="\n") as fh:
        return fh.read()


def read_document(txt_path, schema: RelationSchema = DEFAULT_SCHEMA):
    stem = txt_path[:-4]
    doc_id = os.path.basename(stem)
    try:
        return parse_document(doc_id, _read(txt_path), _read(stem + ".con"), _read(stem + ".rel"), schema)
    except (ParseError, ValidationError) as exc:
        raise type(exc)(f"{doc_id}: {exc}") from exc


def read_corpus(data_dir, schema: RelationSchema = DEFAULT_SCHEMA):
    """Every ``*.txt`` under ``data_dir`` with its annotation files, sorted by id."""
    names = sorted(f for f in os.listdir(data_dir) if f.endswith(".txt"))
    return [read_document(os.path.join(data_dir, f), schema) for f in names]


# ------------------------------------------------------------ model-side view

def _align(line):
    """Map each whitespace token of ``line`` to the model tokens it covers."""
    model = tokenize(line)
    ws = [(m.start(), m.end()) for m in re.finditer(r"\S+", line)]
    ws_to_model = []
    model_to_ws = [None] * len(model)
    j = 0
    for w, (s, e) in enumerate(ws):
        first = j
        while j < len(model) and model[j].start < e:
            model_to_ws[j] = w
            j += 1
        ws_to_model.append((first, j - 1))
    return ws_to_model, model_to_ws


def document_to_sentences(doc: StandoffDocument, vocab=None, max_length=DEFAULT_MAX_LENGTH,
                          schema: RelationSchema = DEFAULT_SCHEMA):
    """One Sentence per non-blank line, with gold spans in model-token coordinates."""
    by_line = {}
    for c in doc.concepts:
        by_line.setdefault(c.line, []).append(c)
    rels_by_line = {}
    for r in doc.relations:
        rels_by_line.setdefault(r.first.line, []).append(r)
    out = []
    for ln, line in enumerate(doc.lines, start=1):
        if not line.strip():
            continue
        ws_to_model, _ = _align(line)
        span_of = {}
        for c in by_line.get(ln, ()):
            span_of[c.key] = EntitySpan(ws_to_model[c.start][0], ws_to_model[c.end][1], c.entity_type)
        rels = []
        for r in rels_by_line.get(ln, ()):
            a, b = span_of[r.first.key], span_of[r.second.key]
            if b < a:
                a, b = b, a
            rels.append(RelationInstance(a, b, r.label))
        rels.sort(key=lambda x: (x.first.start, x.second.start))
        try:
            sent = make_sentence(line, vocab, list(span_of.values()), rels, f"{doc.doc_id}:{ln}", max_length)
        except AnnotationError as exc:
            raise ValidationError(f"{doc.doc_id} line {ln}: {exc}") from exc
        out.append(sent)
    return out


def sentence_predictions_to_annotations(line_no, line, spans, relations,
                                        schema: RelationSchema = DEFAULT_SCHEMA):
    """Turn model-token spans and labelled pairs on one line into Concepts and StandoffRelations.

    ``relations`` holds RelationInstance objects; None labels are dropped.
    """
    words = _ws_tokens(line)
    _, model_to_ws = _align(line)
    concept_of, by_key = {}, {}
    for sp in spans:
        a, b = model_to_ws[sp.start], model_to_ws[sp.end]
        c = Concept(line_no, a, b, sp.entity_type, " ".join(words[a:b + 1]).lower())
        # two model spans inside one whitespace token collapse to the first
        concept_of[sp] = by_key.setdefault(c.key, c)
    concepts = sorted(by_key.values())
    rels = []
    for r in relations:
        if schema.is_none(r.label):
            continue
        fam = schema.family_of_label(r.label)
        a, b = concept_of[r.first], concept_of[r.second]
        if fam.first_type != fam.second_type and a.entity_type != fam.first_type:
            a, b = b, a
        if (a.entity_type, b.entity_type) != (fam.first_type, fam.second_type):
            continue
        rels.append(StandoffRelation(a, b, r.label))
    return concepts, rels


# ------------------------------------------------------------ synthetic corpus

DEFAULT_LEXICON = {
    "problem": (
        "chest pain", "shortness of breath", "fever", "pneumonia", "hypertension",
        "acute renal failure", "nausea", "abdominal pain", "a productive cough", "anemia",
        "atrial fibrillation", "diabetes", "headache", "a small pleural effusion",
        "urinary tract infection", "lower extremity edema", "hypotension", "a rash",
        "dizziness", "sepsis", "a left lower lobe infiltrate", "b12 deficiency",
        "congestive heart failure", "hyperkalemia",
    ),
    "test": (
        "chest x-ray", "a ct scan", "blood cultures", "an ekg", "an echocardiogram",
        "urinalysis", "a cbc", "mri of the brain", "troponin levels", "a chest ct",
        "abdominal ultrasound", "a biopsy", "a lipid panel", "hemoglobin a1c",
        "the physical exam", "a stress test",
    ),
    "treatment": (
        "aspirin", "lasix", "iv antibiotics", "vancomycin", "insulin", "metoprolol",
        "coumadin", "heparin", "surgery", "physical therapy", "morphine",
        "nitroglycerin", "prednisone", "levofloxacin", "supplemental oxygen",
        "a blood transfusion",
    ),
}

# Slots: P problem, T test, R treatment. Relations are (slot, slot, label) in
# the label's argument order; every other candidate pair is a negative.
DEFAULT_TEMPLATES = (
    ("{T} revealed {P} .", ((0, 1, "TeRP"),)),
    ("{T} showed {P} .", ((0, 1, "TeRP"),)),
    ("{T} was significant for {P} .", ((0, 1, "TeRP"),)),
    ("{T} was ordered to evaluate {P} .", ((0, 1, "TeCP"),)),
    ("{T} was done to rule out {P} .", ((0, 1, "TeCP"),)),
    ("{P} improved with {R} .", ((1, 0, "TrIP"),)),
    ("{R} resolved the {P} .", ((0, 1, "TrIP"),)),
    ("{P} worsened despite {R} .", ((1, 0, "TrWP"),)),
    ("{P} did not respond to {R} .", ((1, 0, "TrWP"),)),
    ("{R} caused {P} .", ((0, 1, "TrCP"),)),
    ("she developed {P} after starting {R} .", ((1, 0, "TrCP"),)),
    ("{R} was given for {P} .", ((0, 1, "TrAP"),)),
    ("he was started on {R} for {P} .", ((0, 1, "TrAP"),)),
    ("{R} was held because of {P} .", ((0, 1, "TrNAP"),)),
    ("{R} was discontinued due to {P} .", ((0, 1, "TrNAP"),)),
    ("{P} secondary to {P} .", ((0, 1, "PIP"),)),
    ("{P} in the setting of {P} .", ((0, 1, "PIP"),)),
    ("{P} consistent with {P} .", ((0, 1, "PIP"),)),
    ("patient has a history of {P} and {P} .", ()),
    ("{T} was unremarkable and he denies {P} .", ()),
    ("he takes {R} at home and reports {P} .", ()),
    ("{T} revealed {P} and {R} was given for {P} .", ((0, 1, "TeRP"), (2, 3, "TrAP"))),
    ("{P} secondary to {P} ; {T} was also checked .", ((0, 1, "PIP"),)),
    ("she reports {P} ; {R} caused {P} .", ((1, 2, "TrCP"),)),
    ("{T} was ordered to evaluate {P} , and {P} improved with {R} .", ((0, 1, "TeCP"), (3, 2, "TrIP"))),
    ("no acute distress ; {P} and {P} were noted on {T} .", ()),
    ("{R} was continued ; she also has {P} .", ()),
    ("the patient was seen and examined .", ()),
    ("vital signs were stable overnight .", ()),
    ("she will follow up in clinic in two weeks .", ()),
)

_SLOT_RE = re.compile(r"\{([PTR])\}")
_SLOT_TYPE = {"P": "problem", "T": "test", "R": "treatment"}


@dataclass(frozen=True)
class GrammarConfig:
    min_sentences: int = 4
    max_sentences: int = 9
    templates: tuple = DEFAULT_TEMPLATES
    lexicon: dict = field(default_factory=lambda: dict(DEFAULT_LEXICON))


def _render(template, rels, rng, lexicon):
    words, slots = [], []
    for piece in template.split():
        m = _SLOT_RE.fullmatch(piece)
        if m is None:
            words.append(piece)
            continue
        etype = _SLOT_TYPE[m.group(1)]
        options = lexicon[etype]
        filler = options[int(rng.integers(len(options)))].split()
        slots.append((len(words), len(words) + len(filler) - 1, etype, " ".join(filler)))
        words.extend(filler)
    return " ".join(words), slots, rels


def generate_synthetic_corpus(seed, n_documents, grammar_config: GrammarConfig | None = None):
    """Template-grammar documents whose annotations are correct by construction."""
    if n_documents < 1:
        raise ValueError("n_documents must be >= 1")
    cfg = grammar_config or GrammarConfig()
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_documents):
        n_lines = int(rng.integers(cfg.min_sentences, cfg.max_sentences + 1))
        lines, concepts, relations = [], [], []
        for ln in range(1, n_lines + 1):
            template, rels = cfg.templates[int(rng.integers(len(cfg.templates)))]
            line, slots, rels = _render(template, rels, rng, cfg.lexicon)
            lines.append(line)
            made = [Concept(ln, s, e, t, txt) for s, e, t, txt in slots]
            concepts.extend(made)
            relations.extend(StandoffRelation(made[i], made[j], lab) for i, j, lab in rels)
        docs.append(StandoffDocument(f"synth-{d:04d}", tuple(lines), tuple(concepts), tuple(relations)))
    return docs


def grammar_table(cfg: GrammarConfig | None = None):
    """Markdown table of templates and the relations each one asserts."""
    cfg = cfg or GrammarConfig()
    rows = ["| template | relations (slot indices) |", "|---|---|"]
    for template, rels in cfg.templates:
        desc = ", ".join(f"{lab}({i},{j})" for i, j, lab in rels) or "none"
        rows.append(f"| `{template}` | {desc} |")
    return "\n".join(rows) + "\n"
