"""Acceptance gate: one test per headline criterion.

Each test records its measured value; the terminal summary prints one
PASS/FAIL line per criterion with that value next to its tolerance.
"""
import time
from collections import Counter

import numpy as np
import pytest

import gradsuite
from jointre import autodiff as ad
from jointre.config import load_config
from jointre.i2b2 import document_to_sentences, generate_synthetic_corpus, parse_document, serialize
from jointre.metrics import ner_f1, re_f1
from jointre.model import evaluate
from jointre.relation import (RelationCandidate, downsample_negatives, relation_representation,
                              segment_sentence)
from jointre.schema import DEFAULT_SCHEMA
from jointre.text import EntitySpan
from jointre.trainer import fit, joint_loss, task_losses, train_step

from conftest import bundle_and_batch, random_eval_corpus
from oracles import brute_force_prf, brute_force_representation


def test_gradient_suite(measured):
    start = time.perf_counter()
    worst = {}
    for k, (name, make) in enumerate(sorted(gradsuite.CASES.items())):
        rng = np.random.default_rng(1000 + k)
        worst[name] = max(gradsuite.check(make, rng) for _ in range(20))
    elapsed = time.perf_counter() - start
    name = max(worst, key=worst.get)
    measured(f"{len(worst)} ops x 20 instances; worst relative error {worst[name]:.1e} ({name}) "
             f"<= 1e-4; {elapsed:.1f}s < 60s")
    assert worst[name] <= 1e-4
    assert elapsed < 60


def test_segment_partition(measured):
    checked = violations = 0
    for n in range(2, 11):
        for a1 in range(n):
            for b1 in range(a1, n):
                for a2 in range(b1 + 1, n):
                    for b2 in range(a2, n):
                        segs = segment_sentence(n, EntitySpan(a1, b1, "test"), EntitySpan(a2, b2, "problem"))
                        ranges = segs.ranges()
                        owner = []
                        for r, (lo, hi) in enumerate(ranges):
                            owner.extend([r] * (hi - lo))
                        # brute-force region of each token, independent of the ranges
                        expect = [0 if i < a1 else 1 if i <= b1 else 2 if i < a2 else 3 if i <= b2 else 4
                                  for i in range(n)]
                        ok = (ranges[0][0] == 0 and ranges[-1][1] == n
                              and all(ranges[i][1] == ranges[i + 1][0] for i in range(4))
                              and all(lo <= hi for lo, hi in ranges)
                              and ranges[1][1] > ranges[1][0] and ranges[3][1] > ranges[3][0]
                              and owner == expect)
                        violations += not ok
                        checked += 1
    measured(f"{checked} placements over n<=10; {violations} violations (required 0)")
    assert violations == 0


def test_pooling_oracle(measured):
    r = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n, d = int(r.integers(2, 16)), int(r.integers(1, 9))
        a1, a2 = sorted(r.choice(n, size=2, replace=False))
        b1 = int(r.integers(a1, a2))
        b2 = int(r.integers(a2, n))
        x = r.normal(scale=r.choice([0.01, 1.0, 100.0]), size=(n, d))
        got = relation_representation(ad.Tensor(x), segment_sentence(n, EntitySpan(int(a1), b1, "test"),
                                                                     EntitySpan(int(a2), b2, "problem"))).data
        ref = np.array(brute_force_representation(x.tolist(), (a1, b1), (a2, b2)))
        worst = max(worst, float(np.abs(got - ref).max()))
    measured(f"1000 instances; max abs difference {worst:.1e} <= 1e-12")
    assert worst <= 1e-12


def test_metrics_oracle(measured):
    r = np.random.default_rng(77)
    mismatches = 0
    positive = lambda rels: [[x for x in u if not DEFAULT_SCHEMA.is_none(x.label)] for u in rels]
    for _ in range(1000):
        gold_sp, pred_sp, gold_rel, pred_rel = random_eval_corpus(r, max_relations=20)
        got = ner_f1(pred_sp, gold_sp)
        mismatches += (got.true_positives, got.false_positives, got.false_negatives) != \
            brute_force_prf(pred_sp, gold_sp)
        got = re_f1(pred_rel, gold_rel, "end_to_end")
        mismatches += (got.true_positives, got.false_positives, got.false_negatives) != \
            brute_force_prf(positive(pred_rel), positive(gold_rel))
        # gold-entity condition: predictions restricted to gold spans
        on_gold = [[x for x in u if x.first in g and x.second in g] for u, g in zip(pred_rel, gold_sp)]
        got = re_f1(on_gold, gold_rel, "gold_entities", gold_sp)
        mismatches += (got.true_positives, got.false_positives, got.false_negatives) != \
            brute_force_prf(positive(on_gold), positive(gold_rel))
    measured(f"1000 random corpora (<=20 relations) x 3 metrics; {mismatches} mismatches (required 0)")
    assert mismatches == 0


def test_codec_roundtrip(measured):
    docs = generate_synthetic_corpus(100, 100)
    diffs = 0
    for d in docs:
        files = serialize(d)
        back = parse_document(d.doc_id, *files)
        diffs += (back != d) + (serialize(back) != files)
    measured(f"100 generated documents; {diffs} diffs (required 0)")
    assert diffs == 0


def test_downsampling_ratios(measured):
    ratios = {"PP": 4.0, "TeP": 2.0, "TrP": 1.0}
    r = np.random.default_rng(5)
    over_cap = dropped_pos = floor_breaks = 0
    for _ in range(1000):
        cands, labels = [], []
        for fam in DEFAULT_SCHEMA.families:
            n_pos = int(r.integers(0, 15)) if r.random() > 0.15 else 0
            n_neg = int(r.integers(0, 80))
            labs = [fam.positive_labels[r.integers(len(fam.positive_labels))] for _ in range(n_pos)]
            labs += [fam.none_label] * n_neg
            for lab in labs:
                cands.append(RelationCandidate(EntitySpan(0, 0, "problem"), EntitySpan(len(cands) + 1,
                                               len(cands) + 1, "problem"), fam.name, lab))
                labels.append(lab)
        order = r.permutation(len(cands))
        cands, labels = [cands[i] for i in order], [labels[i] for i in order]
        kept = downsample_negatives(cands, labels, ratios, r)
        pos = Counter(c.family for c in cands if not DEFAULT_SCHEMA.is_none(c.label))
        avail = Counter(c.family for c in cands if DEFAULT_SCHEMA.is_none(c.label))
        neg = Counter(c.family for c in kept if DEFAULT_SCHEMA.is_none(c.label))
        dropped_pos += sum(1 for c in cands if not DEFAULT_SCHEMA.is_none(c.label) and c not in kept)
        for fam in ratios:
            if pos[fam]:
                over_cap += neg[fam] > ratios[fam] * pos[fam]
            else:
                # declared floor for positive-free families
                floor_breaks += neg[fam] != min(5, avail[fam])
    measured(f"1000 resamples (PP=4, TeP=2, TrP=1): {over_cap} families over cap, "
             f"{dropped_pos} positives dropped, {floor_breaks} floor violations (all required 0)")
    assert over_cap == dropped_pos == floor_breaks == 0


def test_overfit_and_determinism(measured, small_sentences):
    cfg = load_config("desk-scale")
    batch_sents = small_sentences[:cfg.train.batch_size]

    def run(steps):
        bundle, batch = bundle_and_batch(cfg, batch_sents)
        rng = np.random.default_rng([cfg.train.seed, 2])
        losses = [train_step(batch, bundle, rng).loss for _ in range(steps)]
        return losses, bundle

    losses, _ = run(300)
    hit = next((i + 1 for i, v in enumerate(losses) if v < 0.05), None)
    a_loss, a = run(20)
    b_loss, b = run(20)
    pa, pb = a.parameters(), b.parameters()
    identical = a_loss == b_loss and all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)
    measured(f"joint loss < 0.05 first at step {hit} (limit 300, lr {cfg.train.learning_rate}); "
             f"final {losses[-1]:.1e}; repeat run bit-identical: {identical}")
    assert hit is not None and hit <= 300
    assert identical


def test_synthetic_learning_run(measured):
    start = time.perf_counter()
    cfg = load_config("desk-scale")
    result = fit(generate_synthetic_corpus(500, 500), cfg)
    test_docs = generate_synthetic_corpus(501, 100)
    sents = [s for d in test_docs for s in document_to_sentences(d, result.bundle.vocab)]
    report = evaluate(result.bundle, sents)
    elapsed = time.perf_counter() - start
    h = report.headline()
    measured(f"NER {h['ner_f1']:.4f} >= 0.95; RE gold {h['re_f1_gold']:.4f} >= 0.90; "
             f"end-to-end {h['re_f1_end2end']:.4f} >= 0.85; e2e <= gold; "
             f"{len(result.history)} epochs in {elapsed / 60:.1f} min <= 15")
    assert h["ner_f1"] >= 0.95
    assert h["re_f1_gold"] >= 0.90
    assert h["re_f1_end2end"] >= 0.85
    assert h["re_f1_end2end"] <= h["re_f1_gold"]
    assert elapsed <= 15 * 60


def test_mtl_gradient_additivity(measured, small_sentences):
    cfg = load_config("desk-scale")
    bundle, batch = bundle_and_batch(cfg, small_sentences[:16])
    params = bundle.parameters()

    def grads(which):
        ad.zero_grad(params)
        ner, re, _ = task_losses(bundle, batch, training=True, rng=np.random.default_rng(3))
        ad.backward({"ner": ner, "re": re, "joint": joint_loss(ner, re)}[which])
        return {k: p.grad.copy() for k, p in params.items() if k.startswith("encoder/")}

    joint, ner, re = grads("joint"), grads("ner"), grads("re")
    worst = max(float(np.abs(joint[k] - ner[k] - re[k]).max()) for k in joint)
    measured(f"{len(joint)} encoder tensors; max |g_joint - (g_ner + g_re)| = {worst:.1e} <= 1e-10")
    assert any(re[k].any() for k in re) and any(ner[k].any() for k in ner)
    assert worst <= 1e-10


def test_early_stopping(measured, small_corpus):
    from jointre.metrics import PRF
    from jointre.model import EvalResult

    cfg = load_config("paper-faithful")
    assert cfg.train.early_stop_patience == 10
    scores = iter([0.4])

    def rigged(bundle, sentences):
        # improves once, then never again
        s = next(scores, 0.1)
        return EvalResult(PRF(0, 0, 0), PRF(0, 0, 0), PRF(int(s * 10), 10 - int(s * 10), 10 - int(s * 10)))

    result = fit(small_corpus, cfg, evaluate_fn=rigged)
    measured(f"patience {cfg.train.early_stop_patience}: stopped after {len(result.history)} epochs "
             f"(required {cfg.train.early_stop_patience + 1}); best epoch {result.bundle.epoch}")
    assert len(result.history) == cfg.train.early_stop_patience + 1
    assert result.stopped_early and result.bundle.epoch == 1
