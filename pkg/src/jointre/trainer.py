"""Multi-task training loop: one encoder pass, summed NER + RE loss, Adam, early stopping."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .errors import ConfigError, NumericError
from .i2b2 import document_to_sentences
from .model import ModelBundle, Batch, EvalResult, candidate_reps, evaluate, make_batch, valid_positions
from .relation import downsample_negatives, generate_candidate_pairs, label_candidates
from .text import Vocabulary

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "ner_loss", "re_loss", "val_ner_f1", "val_re_f1_gold", "val_re_f1_end2end")


def split_train_val(documents, fraction, seed):
    """Shuffle documents with ``seed`` and cut at ``round(fraction * n)``; both sides non-empty."""
    docs = list(documents)
    if len(docs) < 2:
        raise ConfigError(f"need at least 2 documents to split, got {len(docs)}")
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"train fraction {fraction} outside (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(docs))
    n_train = min(max(int(round(fraction * len(docs))), 1), len(docs) - 1)
    return [docs[i] for i in perm[:n_train]], [docs[i] for i in perm[n_train:]]


def joint_loss(ner_loss, re_loss, weights=(1.0, 1.0)):
    for name, value in (("ner", ner_loss), ("re", re_loss)):
        if not np.isfinite(ad.as_tensor(value).data).all():
            raise NumericError(f"{name} loss is not finite: {ad.as_tensor(value).data}")
    return ad.add(ad.mul(ner_loss, weights[0]), ad.mul(re_loss, weights[1]))


def task_losses(bundle: ModelBundle, batch: Batch, training=True, rng=None):
    """Forward the shared encoder once; return ``(ner_loss, re_loss, encoded)``."""
    encoded = bundle.encoder(batch.ids, batch.lengths, training=training, rng=rng)
    logits = bundle.ner(encoded, batch.lengths)
    B, T, C = logits.shape
    pos = valid_positions(batch)
    ner_loss = ad.cross_entropy(logits.reshape(B * T, C)[pos], batch.tags.reshape(-1)[pos])
    re_loss = ad.Tensor(0.0)
    if batch.candidates:
        reps = candidate_reps(encoded, batch, batch.candidates)
        cands = [c for _, c in batch.candidates]
        total = None
        for name, (rows, fam_logits) in bundle.re.family_logits(reps, [c.family for c in cands]).items():
            labels = bundle.schema.family(name).labels
            targets = [labels.index(cands[r].label) for r in rows]
            part = ad.cross_entropy(fam_logits, targets, reduction="sum")
            total = part if total is None else total + part
        re_loss = total * (1.0 / len(cands))
    return ner_loss, re_loss, encoded


@dataclass
class StepMetrics:
    ner_loss: float
    re_loss: float
    loss: float
    grad_norm: float
    n_candidates: int


def _non_finite_sentences(bundle, batch):
    with ad.no_grad():
        enc = bundle.encoder(batch.ids, batch.lengths)
        logits = bundle.ner(enc, batch.lengths).data
    bad = [s.sent_id for b, s in enumerate(batch.sentences)
           if not np.isfinite(logits[b, :batch.lengths[b]]).all()]
    return bad or [s.sent_id for s in batch.sentences]


def train_step(batch: Batch, bundle: ModelBundle, rng=None) -> StepMetrics:
    cfg = bundle.config.train
    params = bundle.parameters()
    ad.zero_grad(params)
    ner_loss, re_loss, _ = task_losses(bundle, batch, training=True, rng=rng)
    try:
        loss = joint_loss(ner_loss, re_loss, cfg.loss_weights)
    except NumericError as exc:
        ids = ", ".join(_non_finite_sentences(bundle, batch))
        raise NumericError(f"{exc} (sentences: {ids})") from exc
    ad.backward(loss)
    norm = ad.adam_step(params, bundle.adam, cfg.learning_rate, cfg.clip_norm)
    return StepMetrics(ner_loss.item(), re_loss.item(), loss.item(), norm, len(batch.candidates))


@dataclass
class EpochRecord:
    epoch: int
    ner_loss: float
    re_loss: float
    val_ner_f1: float
    val_re_f1_gold: float
    val_re_f1_end2end: float

    def row(self):
        return [self.epoch, self.ner_loss, self.re_loss, self.val_ner_f1, self.val_re_f1_gold,
                self.val_re_f1_end2end]


@dataclass
class TrainingData:
    vocab: Vocabulary
    train: list
    val: list
    train_docs: list = field(default_factory=list)
    val_docs: list = field(default_factory=list)


def prepare_data(documents, config: RunConfig, vocab=None) -> TrainingData:
    """Split documents, build the vocabulary from the training side, convert to sentences."""
    tc = config.train
    train_docs, val_docs = split_train_val(documents, tc.train_fraction, tc.seed)
    max_len = config.encoder.max_sequence_length
    if vocab is None:
        raw = [s.tokens for d in train_docs for s in document_to_sentences(d, None, max_len)]
        vocab = Vocabulary.build(raw, min_freq=tc.min_token_freq, lowercase=tc.lowercase)
    train = [s for d in train_docs for s in document_to_sentences(d, vocab, max_len)]
    val = [s for d in val_docs for s in document_to_sentences(d, vocab, max_len)]
    return TrainingData(vocab, train, val, train_docs, val_docs)


def labelled_candidates(sentences, schema):
    """Gold-boundary candidates with gold labels, flattened as ``(sentence index, candidate)``."""
    out = []
    for i, s in enumerate(sentences):
        cands = generate_candidate_pairs(s.gold_entities or (), schema, s.sent_id)
        out.extend((i, c) for c in label_candidates(cands, s.gold_relations, schema))
    return out


@dataclass
class FitResult:
    bundle: ModelBundle
    history: list
    data: TrainingData
    stopped_early: bool = False


def _rng(bundle, key, seed, stream):
    state = bundle.rng_states.get(key)
    rng = np.random.default_rng([seed, stream])
    if state is not None:
        rng.bit_generator.state = state
    return rng


def fit(documents, config: RunConfig, bundle: ModelBundle | None = None, evaluate_fn=None,
        on_epoch=None) -> FitResult:
    """Train until the validation end-to-end RE F1 stalls for ``patience`` epochs.

    ``evaluate_fn(bundle, sentences) -> EvalResult`` replaces the built-in
    evaluation (tests use it to rig the monitored metric). Passing a loaded
    ``bundle`` resumes from its epoch counter and optimiser state.
    """
    tc = config.train
    data = prepare_data(documents, config, bundle.vocab if bundle is not None else None)
    if bundle is None:
        bundle = ModelBundle(config, data.vocab)
    evaluate_fn = evaluate_fn or evaluate
    schema = bundle.schema
    pool = labelled_candidates(data.train, schema)
    data_rng = _rng(bundle, "data", tc.seed, 1)
    dropout_rng = _rng(bundle, "dropout", tc.seed, 2)

    history = []
    best = bundle.snapshot() if bundle.best_score is not None else None
    best_score = bundle.best_score if bundle.best_score is not None else -np.inf
    stale = 0
    stopped_early = False
    for epoch in range(bundle.epoch + 1, tc.max_epochs + 1):
        kept = downsample_negatives(pool, [c.label for _, c in pool], config.re.ratios, data_rng,
                                    schema, config.re.zero_positive_floor)
        per_sentence = {}
        for i, c in kept:
            per_sentence.setdefault(i, []).append(c)
        order = data_rng.permutation(len(data.train))
        ner_sum = re_sum = 0.0
        n_steps = 0
        for k in range(0, len(order), tc.batch_size):
            idx = order[k:k + tc.batch_size]
            batch = make_batch([data.train[i] for i in idx], bundle.tagset,
                               [per_sentence.get(i, []) for i in idx])
            m = train_step(batch, bundle, dropout_rng)
            ner_sum += m.ner_loss
            re_sum += m.re_loss
            n_steps += 1
        bundle.epoch = epoch
        result: EvalResult = evaluate_fn(bundle, data.val)
        rec = EpochRecord(epoch, ner_sum / max(n_steps, 1), re_sum / max(n_steps, 1),
                          result.ner.f1, result.re_gold.f1, result.re_end2end.f1)
        history.append(rec)
        bundle.rng_states = {"data": data_rng.bit_generator.state, "dropout": dropout_rng.bit_generator.state}
        log.info("epoch %d ner_loss %.4f re_loss %.4f val ner %.4f re_gold %.4f re_e2e %.4f",
                 *rec.row())
        if result.score > best_score:
            best_score = result.score
            bundle.best_score = best_score
            best = bundle.snapshot()
            stale = 0
        else:
            stale += 1
        if on_epoch is not None:
            on_epoch(bundle, rec, stale == 0)
        if stale >= tc.early_stop_patience:
            stopped_early = True
            break
    if best is not None:
        rng_states = bundle.rng_states
        bundle.restore(best)
        bundle.rng_states = rng_states
    return FitResult(bundle, history, data, stopped_early)


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow(rec.row())
