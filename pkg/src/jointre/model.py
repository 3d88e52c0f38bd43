"""The joint model: shared encoder, both heads, optimiser state, and inference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, load_arrays, save_arrays
from .config import RunConfig
from .encoder import Encoder
from .errors import CheckpointError
from .metrics import PRF, ner_f1, re_f1
from .ner import NerHead, logits_to_spans
from .relation import ReHead, batch_representations, generate_candidate_pairs, segment_sentence
from .schema import RelationSchema
from .text import PAD, RelationInstance, TagSet, Vocabulary, encode_bio


class ModelBundle:
    def __init__(self, config: RunConfig, vocab: Vocabulary):
        self.config = config.validate()
        self.vocab = vocab
        self.schema = RelationSchema.from_dict(config.schema)
        self.tagset = TagSet(self.schema.entity_types)
        init_rng = np.random.default_rng([config.train.seed, 0])
        d = config.encoder.model_dim
        self.encoder = Encoder(config.encoder, len(vocab), init_rng)
        self.ner = NerHead(d, config.ner, init_rng, self.tagset)
        self.re = ReHead(d, config.re.hidden_dim, init_rng, self.schema)
        if config.train.freeze_encoder:
            self.encoder.set_trainable(False)
        self.adam = AdamState()
        self.epoch = 0
        self.best_score = None
        self.rng_states = {}

    def parameters(self):
        out = {}
        for prefix, mod in (("encoder", self.encoder), ("ner", self.ner), ("re", self.re)):
            out.update(mod.named_parameters(prefix + "/"))
        return out

    # --------------------------------------------------------------- snapshots
    def snapshot(self):
        return {
            "params": {k: p.data.copy() for k, p in self.parameters().items()},
            "adam": (self.adam.step_count, {k: v.copy() for k, v in self.adam.first_moment.items()},
                     {k: v.copy() for k, v in self.adam.second_moment.items()}),
            "epoch": self.epoch,
            "best_score": self.best_score,
        }

    def restore(self, snap):
        params = self.parameters()
        for k, arr in snap["params"].items():
            params[k].data = arr.copy()
        step, m, v = snap["adam"]
        self.adam.step_count = step
        self.adam.first_moment = {k: a.copy() for k, a in m.items()}
        self.adam.second_moment = {k: a.copy() for k, a in v.items()}
        self.epoch = snap["epoch"]
        self.best_score = snap["best_score"]

    # --------------------------------------------------------------- checkpoint
    def save(self, path):
        arrays = {}
        for name, p in self.parameters().items():
            arrays["param/" + name] = p.data
        for name, m in self.adam.first_moment.items():
            arrays["adam/m/" + name] = m
        for name, v in self.adam.second_moment.items():
            arrays["adam/v/" + name] = v
        meta = {
            "config": self.config.to_dict(),
            "vocab": self.vocab.itos,
            "vocab_lowercase": self.vocab.lowercase,
            "epoch": self.epoch,
            "best_score": self.best_score,
            "adam": {"step_count": self.adam.step_count, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "epsilon": self.adam.epsilon},
            "rng_states": self.rng_states,
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path):
        arrays, meta = load_arrays(path)
        try:
            config = RunConfig.from_dict(meta["config"])
            vocab = Vocabulary(meta["vocab"][2:], lowercase=meta["vocab_lowercase"])
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: incomplete metadata ({exc})") from exc
        bundle = cls(config, vocab)
        params = bundle.parameters()
        expected = {"param/" + k for k in params}
        stored = {k for k in arrays if k.startswith("param/")}
        if expected != stored:
            missing, extra = sorted(expected - stored), sorted(stored - expected)
            raise CheckpointError(f"{path}: parameter set mismatch (missing {missing[:3]}, extra {extra[:3]})")
        for name, p in params.items():
            arr = arrays["param/" + name]
            if arr.shape != p.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects {p.shape}")
            p.data = arr.astype(np.float64)
        a = meta["adam"]
        bundle.adam = AdamState(a["step_count"],
                                {k[7:]: v for k, v in arrays.items() if k.startswith("adam/m/")},
                                {k[7:]: v for k, v in arrays.items() if k.startswith("adam/v/")},
                                a["beta1"], a["beta2"], a["epsilon"])
        bundle.epoch = meta["epoch"]
        bundle.best_score = meta["best_score"]
        bundle.rng_states = meta.get("rng_states", {})
        return bundle


# ------------------------------------------------------------------- batching

@dataclass
class Batch:
    sentences: list
    ids: np.ndarray
    lengths: np.ndarray
    tags: np.ndarray | None = None
    candidates: list = field(default_factory=list)  # (row in batch, RelationCandidate)

    @property
    def width(self):
        return self.ids.shape[1]


def make_batch(sentences, tagset: TagSet | None = None, candidates=None):
    """Pad token ids to the longest sentence; gold tags when a tagset is given."""
    B = len(sentences)
    T = max(len(s) for s in sentences)
    ids = np.full((B, T), PAD, dtype=np.int64)
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    tags = None if tagset is None else np.zeros((B, T), dtype=np.int64)
    for b, s in enumerate(sentences):
        ids[b, :len(s)] = s.token_ids
        if tags is not None:
            tags[b, :len(s)] = tagset.encode(encode_bio(len(s), s.gold_entities or ()))
    flat = []
    for b, cands in enumerate(candidates or ()):
        flat.extend((b, c) for c in cands)
    return Batch(list(sentences), ids, lengths, tags, flat)


def valid_positions(batch):
    T = batch.width
    return np.concatenate([b * T + np.arange(n) for b, n in enumerate(batch.lengths)])


def candidate_reps(encoded, batch, candidates):
    """``[C, 5d]`` pooled representations for ``(row, candidate)`` pairs."""
    B, T, d = encoded.shape
    flat = encoded.reshape(B * T, d)
    segs = [segment_sentence(batch.lengths[b], c.first, c.second) for b, c in candidates]
    offsets = [b * T for b, _ in candidates]
    return batch_representations(flat, offsets, segs)


# ------------------------------------------------------------------- inference

@dataclass
class SentencePrediction:
    entities: list
    relations: list  # RelationInstance over predicted entities, None labels included
    gold_entity_relations: list | None = None  # RelationInstance over gold entities


def _classify(bundle, encoded, batch, cands):
    if not cands:
        return []
    reps = candidate_reps(encoded, batch, cands)
    return bundle.re.predict_labels(reps, [c.family for _, c in cands])


def predict_batch(bundle: ModelBundle, sentences, with_gold=False):
    """Eval-mode forward: NER argmax, then RE over predicted (and optionally gold) pairs."""
    batch = make_batch(sentences)
    with ad.no_grad():
        encoded = bundle.encoder(batch.ids, batch.lengths, training=False)
        logits = bundle.ner(encoded, batch.lengths).data
    preds = []
    pred_cands, gold_cands = [], []
    for b, s in enumerate(sentences):
        spans = logits_to_spans(logits[b, :len(s)], bundle.tagset)
        preds.append(SentencePrediction(spans, []))
        pred_cands.extend((b, c) for c in generate_candidate_pairs(spans, bundle.schema, s.sent_id))
        if with_gold:
            preds[-1].gold_entity_relations = []
            gold_cands.extend((b, c) for c in
                              generate_candidate_pairs(s.gold_entities or (), bundle.schema, s.sent_id))
    with ad.no_grad():
        for cands, attr in ((pred_cands, "relations"), (gold_cands, "gold_entity_relations")):
            for (b, c), lab in zip(cands, _classify(bundle, encoded, batch, cands)):
                getattr(preds[b], attr).append(RelationInstance(c.first, c.second, lab))
    return preds


def predict(bundle, sentences, batch_size=64, with_gold=False):
    order = sorted(range(len(sentences)), key=lambda i: len(sentences[i]))
    out = [None] * len(sentences)
    for k in range(0, len(order), batch_size):
        idx = order[k:k + batch_size]
        for i, p in zip(idx, predict_batch(bundle, [sentences[i] for i in idx], with_gold)):
            out[i] = p
    return out


def predict_entities(bundle, sentence):
    return predict_batch(bundle, [sentence])[0].entities


@dataclass
class EvalResult:
    ner: PRF
    re_gold: PRF
    re_end2end: PRF
    re_gold_by_label: dict = field(default_factory=dict)
    re_end2end_by_label: dict = field(default_factory=dict)

    @property
    def score(self):
        """Model-selection metric: end-to-end relation F1."""
        return self.re_end2end.f1

    def headline(self):
        return {"ner_f1": self.ner.f1, "re_f1_gold": self.re_gold.f1, "re_f1_end2end": self.re_end2end.f1}


def evaluate(bundle, sentences, batch_size=64):
    preds = predict(bundle, sentences, batch_size, with_gold=True)
    gold_spans = [list(s.gold_entities or ()) for s in sentences]
    gold_rels = [list(s.gold_relations or ()) for s in sentences]
    pred_spans = [p.entities for p in preds]
    gold_cond = [p.gold_entity_relations for p in preds]
    e2e = [p.relations for p in preds]
    schema = bundle.schema
    return EvalResult(
        ner_f1(pred_spans, gold_spans),
        re_f1(gold_cond, gold_rels, "gold_entities", gold_spans, schema),
        re_f1(e2e, gold_rels, "end_to_end", schema=schema),
        re_f1(gold_cond, gold_rels, "gold_entities", gold_spans, schema, by_label=True),
        re_f1(e2e, gold_rels, "end_to_end", schema=schema, by_label=True),
    )
