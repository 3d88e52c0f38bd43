"""Micro-averaged exact-match precision/recall/F1 for entities and relations."""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass

from .errors import ContractError
from .schema import DEFAULT_SCHEMA, RelationSchema

GOLD_ENTITIES = "gold_entities"
END_TO_END = "end_to_end"
_CONDITIONS = {"gold": GOLD_ENTITIES, GOLD_ENTITIES: GOLD_ENTITIES,
               "end2end": END_TO_END, END_TO_END: END_TO_END}


@dataclass(frozen=True)
class PRF:
    true_positives: int
    false_positives: int
    false_negatives: int

    @property
    def precision(self):
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 0.0

    @property
    def recall(self):
        denom = self.true_positives + self.false_negatives
        return self.true_positives / denom if denom else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other):
        return PRF(self.true_positives + other.true_positives,
                   self.false_positives + other.false_positives,
                   self.false_negatives + other.false_negatives)

    def to_dict(self):
        d = asdict(self)
        d.update(precision=self.precision, recall=self.recall, f1=self.f1)
        return d


def _count(pred_keys, gold_keys):
    p, g = Counter(pred_keys), Counter(gold_keys)
    tp = sum((p & g).values())
    return PRF(tp, sum(p.values()) - tp, sum(g.values()) - tp)


def _units(*collections):
    """Align per-unit collections given as parallel sequences or dicts keyed by unit id."""
    if any(isinstance(c, dict) for c in collections):
        if not all(isinstance(c, dict) for c in collections):
            raise ContractError("mix of keyed and positional unit collections")
        keys = sorted(set().union(*collections), key=str)
        return [tuple(c.get(k, ()) for c in collections) for k in keys]
    sizes = {len(c) for c in collections}
    if len(sizes) > 1:
        raise ContractError(f"unit collections differ in length: {sorted(sizes)}")
    return list(zip(*collections))


def ner_f1(predicted, gold) -> PRF:
    """Spans count only on an exact (start, end, type) match.

    ``predicted`` and ``gold`` are parallel sequences (or dicts keyed by unit
    id) of span collections; counts are pooled before the ratios.
    """
    total = PRF(0, 0, 0)
    for p, g in _units(predicted, gold):
        total = total + _count([(s.start, s.end, s.entity_type) for s in p],
                               [(s.start, s.end, s.entity_type) for s in g])
    return total


def _rel_key(r):
    return ((r.first.start, r.first.end, r.first.entity_type),
            (r.second.start, r.second.end, r.second.entity_type), r.label)


def re_f1(predicted, gold, condition, gold_entities=None, schema: RelationSchema = DEFAULT_SCHEMA,
          by_label=False):
    """Relation F1 over positive labels only; None predictions are ignored.

    Under ``gold_entities`` every predicted argument must be one of the gold
    spans passed in ``gold_entities``; under ``end_to_end`` arguments are
    predicted spans and both must match gold exactly for a hit.
    """
    cond = _CONDITIONS.get(condition)
    if cond is None:
        raise ContractError(f"unknown evaluation condition {condition!r}")
    if cond == GOLD_ENTITIES:
        if gold_entities is None:
            raise ContractError("gold_entities condition needs the gold entity spans")
        for p, _, allowed in _units(predicted, gold, gold_entities):
            allowed = set(allowed)
            for r in p:
                if r.first not in allowed or r.second not in allowed:
                    raise ContractError(f"gold_entities condition: prediction {r} uses a non-gold span")
    units = _units(predicted, gold)

    totals = {}
    for p, g in units:
        pk = [_rel_key(r) for r in p if not schema.is_none(r.label)]
        gk = [_rel_key(r) for r in g if not schema.is_none(r.label)]
        if by_label:
            for lab in schema.positive_labels:
                c = _count([k for k in pk if k[2] == lab], [k for k in gk if k[2] == lab])
                totals[lab] = totals.get(lab, PRF(0, 0, 0)) + c
        else:
            totals["all"] = totals.get("all", PRF(0, 0, 0)) + _count(pk, gk)
    if by_label:
        return {lab: totals.get(lab, PRF(0, 0, 0)) for lab in schema.positive_labels}
    return totals.get("all", PRF(0, 0, 0))
