"""Relation branch built on five-segment mean pooling around an entity pair.

For a pair (e1, e2) in text order the sentence splits into before / e1 /
between / e2 / after. Each segment is mean-pooled (empty segments pool to
zeros) and the five vectors are concatenated in that order, giving a
``5 * d`` representation whatever the sentence length. No marker tokens
are inserted, so every candidate in a sentence shares one encoder pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CandidateError, ContractError
from .nn import Linear, Module
from .schema import DEFAULT_SCHEMA, RelationSchema
from .text import EntitySpan

SEGMENT_NAMES = ("before", "entity1", "between", "entity2", "after")


@dataclass(frozen=True)
class SegmentSpans:
    before: tuple
    entity1: tuple
    between: tuple
    entity2: tuple
    after: tuple

    def ranges(self):
        return (self.before, self.entity1, self.between, self.entity2, self.after)


@dataclass(frozen=True)
class RelationCandidate:
    first: EntitySpan
    second: EntitySpan
    family: str
    label: str | None = None
    sent_id: str = ""


def segment_sentence(n, e1: EntitySpan, e2: EntitySpan) -> SegmentSpans:
    if not (0 <= e1.start <= e1.end < e2.start <= e2.end < n):
        raise CandidateError(f"entities {e1} and {e2} are not a text-ordered, non-overlapping pair in [0, {n})")
    return SegmentSpans(
        (0, e1.start),
        (e1.start, e1.end + 1),
        (e1.end + 1, e2.start),
        (e2.start, e2.end + 1),
        (e2.end + 1, n),
    )


def average_pool(embeddings, rng_range):
    """Mean of rows ``[start, end)`` of an ``[n, d]`` tensor; zeros when the range is empty."""
    start, end = rng_range
    out = ad.segment_mean(embeddings, [start], [end])
    return out.reshape(embeddings.shape[1])


def relation_representation(embeddings, segments: SegmentSpans):
    starts = [r[0] for r in segments.ranges()]
    ends = [r[1] for r in segments.ranges()]
    return ad.segment_mean(embeddings, starts, ends).reshape(5 * embeddings.shape[1])


def batch_representations(flat_embeddings, row_offsets, segment_list):
    """``[C, 5d]`` representations for many candidates over a flattened ``[N, d]`` batch.

    ``row_offsets[c]`` is where candidate c's sentence starts in the flat rows.
    """
    d = flat_embeddings.shape[1]
    if not segment_list:
        return None
    bounds = np.array([[r for r in seg.ranges()] for seg in segment_list], dtype=np.int64)
    bounds = bounds + np.asarray(row_offsets, dtype=np.int64)[:, None, None]
    pooled = ad.segment_mean(flat_embeddings, bounds[:, :, 0].reshape(-1), bounds[:, :, 1].reshape(-1))
    return pooled.reshape(len(segment_list), 5 * d)


def generate_candidate_pairs(entities, schema: RelationSchema = DEFAULT_SCHEMA, sent_id=""):
    """Every text-ordered pair whose types form a relation family, sorted by (first, second) start."""
    ordered = sorted(entities)
    out = []
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            if a.end >= b.start:
                continue
            fam = schema.family_of_types(a.entity_type, b.entity_type)
            if fam is not None:
                out.append(RelationCandidate(a, b, fam.name, None, sent_id))
    out.sort(key=lambda c: (c.first.start, c.second.start))
    return out


def label_candidates(candidates, gold_relations, schema: RelationSchema = DEFAULT_SCHEMA):
    """Attach gold labels; pairs without a gold relation get their family's None label."""
    gold = {(r.first, r.second): r.label for r in gold_relations or ()}
    return [RelationCandidate(c.first, c.second, c.family,
                              gold.get((c.first, c.second), schema.family(c.family).none_label), c.sent_id)
            for c in candidates]


def downsample_negatives(candidates, labels, ratios, rng, schema: RelationSchema = DEFAULT_SCHEMA,
                         zero_positive_floor=5):
    """Keep every positive; per family keep at most ``ratio * positives`` random negatives.

    A family with no positives keeps ``min(zero_positive_floor, available)``
    negatives so its None class still sees data. Input order is preserved.
    """
    fam_pos, fam_neg = {}, {}
    for i, lab in enumerate(labels):
        fam = schema.family_of_label(lab)
        bucket = fam_neg if lab == fam.none_label else fam_pos
        bucket.setdefault(fam.name, []).append(i)
    keep = [i for idx in fam_pos.values() for i in idx]
    for name, neg in fam_neg.items():
        n_pos = len(fam_pos.get(name, ()))
        cap = int(np.floor(ratios.get(name, np.inf) * n_pos)) if n_pos else min(zero_positive_floor, len(neg))
        if cap >= len(neg):
            keep.extend(neg)
        elif cap > 0:
            keep.extend(rng.choice(neg, size=cap, replace=False).tolist())
    return [candidates[i] for i in sorted(keep)]


class ReHead(Module):
    """Shared ReLU hidden layer, then one logits layer per relation family."""

    def __init__(self, model_dim, hidden_dim, rng, schema: RelationSchema = DEFAULT_SCHEMA):
        self.schema = schema
        self.hidden = Linear(5 * model_dim, hidden_dim, rng)
        self.outputs = {f.name: Linear(hidden_dim, len(f.labels), rng) for f in schema.families}

    def classify_relation(self, repr_, pair_family):
        if pair_family not in self.outputs:
            raise ContractError(f"unknown relation family {pair_family!r}")
        single = repr_.ndim == 1
        x = repr_.reshape(1, -1) if single else repr_
        logits = self.outputs[pair_family](ad.relu(self.hidden(x)))
        return logits.reshape(-1) if single else logits

    def family_logits(self, reps, families):
        """Group ``[C, 5d]`` representations by family: ``{family: (row indices, logits)}``."""
        hidden = ad.relu(self.hidden(reps))
        out = {}
        families = np.asarray(families)
        for name, layer in self.outputs.items():
            rows = np.flatnonzero(families == name)
            if len(rows):
                out[name] = (rows, layer(hidden[rows]))
        return out

    def predict_labels(self, reps, families):
        labels = [None] * len(families)
        for name, (rows, logits) in self.family_logits(reps, families).items():
            fam_labels = self.schema.family(name).labels
            for r, k in zip(rows, np.argmax(logits.data, axis=1)):
                labels[r] = fam_labels[k]
        return labels
