from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointre import autodiff as ad
from jointre.errors import CandidateError, ContractError
from jointre.relation import (RelationCandidate, ReHead, average_pool, downsample_negatives,
                              generate_candidate_pairs, label_candidates, relation_representation,
                              segment_sentence)
from jointre.schema import DEFAULT_SCHEMA
from jointre.text import EntitySpan, RelationInstance
from jointre.trainer import task_losses

from conftest import bundle_and_batch, tiny_config
from oracles import brute_force_representation

RATIOS = {"PP": 4.0, "TeP": 2.0, "TrP": 1.0}


def span(a, b, t="problem"):
    return EntitySpan(a, b, t)


class TestSegments:
    def test_example(self):
        s = segment_sentence(8, span(2, 3), span(5, 5))
        assert s.ranges() == ((0, 2), (2, 4), (4, 5), (5, 6), (6, 8))

    def test_entity_at_start(self):
        assert segment_sentence(4, span(0, 0), span(2, 3)).before == (0, 0)

    def test_adjacent_at_end(self):
        s = segment_sentence(5, span(1, 2), span(3, 4))
        assert s.between == (3, 3) and s.after == (5, 5)

    @pytest.mark.parametrize("e1, e2, n", [
        ((2, 3), (3, 4), 6),   # overlap
        ((4, 4), (1, 2), 6),   # out of order
        ((0, 1), (3, 6), 6),   # past the end
    ])
    def test_invalid_pairs(self, e1, e2, n):
        with pytest.raises(CandidateError):
            segment_sentence(n, span(*e1), span(*e2))


class TestPooling:
    def test_single_row(self):
        x = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(average_pool(x, (1, 2)).data, [3.0, 4.0])

    def test_hand_mean(self):
        x = ad.Tensor([[1.0, 3.0], [3.0, 5.0]])
        np.testing.assert_array_equal(average_pool(x, (0, 2)).data, [2.0, 4.0])

    def test_empty(self):
        np.testing.assert_array_equal(average_pool(ad.Tensor(np.ones((3, 4))), (2, 2)).data, np.zeros(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.floats(-5, 5), st.integers(0, 2 ** 32 - 1))
    def test_linearity(self, n, alpha, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=(n, 3))
        a = int(r.integers(0, n))
        b = int(r.integers(a, n + 1))
        np.testing.assert_allclose(average_pool(ad.Tensor(alpha * x), (a, b)).data,
                                   alpha * average_pool(ad.Tensor(x), (a, b)).data, atol=1e-12)


class TestRepresentation:
    def test_length(self, rng):
        segs = segment_sentence(6, span(0, 0), span(5, 5))
        assert relation_representation(ad.Tensor(rng.normal(size=(6, 7))), segs).shape == (35,)

    def test_constant_rows(self, rng):
        row = rng.normal(size=4)
        segs = segment_sentence(6, span(1, 1), span(3, 4))
        out = relation_representation(ad.Tensor(np.tile(row, (6, 1))), segs).data.reshape(5, 4)
        np.testing.assert_allclose(out, np.tile(row, (5, 1)), atol=1e-15)

    def test_slot_isolation(self, rng):
        x = rng.normal(size=(8, 3))
        segs = segment_sentence(8, span(1, 2), span(5, 6))
        swapped = x.copy()
        swapped[[1, 2, 5, 6]] = x[[5, 6, 1, 2]]
        a = relation_representation(ad.Tensor(x), segs).data.reshape(5, 3)
        b = relation_representation(ad.Tensor(swapped), segs).data.reshape(5, 3)
        same = np.all(a == b, axis=1)
        assert same.tolist() == [True, False, True, False, True]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 2 ** 32 - 1))
    def test_matches_brute_force(self, n, seed):
        r = np.random.default_rng(seed)
        cuts = np.sort(r.choice(np.arange(n), size=2, replace=False))
        a1 = int(r.integers(0, cuts[0] + 1))
        e1, e2 = span(a1, int(cuts[0])), span(int(cuts[1]), int(r.integers(cuts[1], n)))
        x = r.normal(size=(n, 3))
        out = relation_representation(ad.Tensor(x), segment_sentence(n, e1, e2)).data
        np.testing.assert_allclose(out, brute_force_representation(x.tolist(), (e1.start, e1.end),
                                                                   (e2.start, e2.end)), atol=1e-12)


class TestClassify:
    def test_tep_logit_count(self, rng):
        head = ReHead(4, 8, rng)
        assert head.classify_relation(ad.Tensor(rng.normal(size=20)), "TeP").shape == (3,)
        assert head.classify_relation(ad.Tensor(rng.normal(size=20)), "TrP").shape == (6,)

    def test_zero_repr_gives_bias(self, rng):
        head = ReHead(4, 8, rng)
        head.outputs["PP"].bias.data = rng.normal(size=2)
        out = head.classify_relation(ad.Tensor(np.zeros(20)), "PP").data
        np.testing.assert_array_equal(out, head.outputs["PP"].bias.data)

    def test_unknown_family(self, rng):
        with pytest.raises(ContractError, match="XX"):
            ReHead(4, 8, rng).classify_relation(ad.Tensor(np.zeros(20)), "XX")

    def test_predict_labels_by_family(self, rng):
        head = ReHead(2, 4, rng)
        labels = head.predict_labels(ad.Tensor(rng.normal(size=(3, 10))), ["PP", "TrP", "TeP"])
        assert labels[0] in DEFAULT_SCHEMA.family("PP").labels
        assert labels[1] in DEFAULT_SCHEMA.family("TrP").labels
        assert labels[2] in DEFAULT_SCHEMA.family("TeP").labels


class TestCandidates:
    def test_problem_problem(self):
        (c,) = generate_candidate_pairs([span(0, 0), span(2, 2)])
        assert c.family == "PP"

    def test_test_treatment(self):
        assert generate_candidate_pairs([span(0, 0, "test"), span(2, 2, "treatment")]) == []

    def test_three_entities(self):
        p1, t, p3 = span(0, 0), span(2, 3, "test"), span(5, 5)
        cands = generate_candidate_pairs([p3, t, p1])
        assert [(c.first, c.second, c.family) for c in cands] == [
            (p1, t, "TeP"), (p1, p3, "PP"), (t, p3, "TeP")]

    def test_either_text_order(self):
        for ents in ([span(0, 0, "treatment"), span(1, 1)], [span(0, 0), span(1, 1, "treatment")]):
            assert [c.family for c in generate_candidate_pairs(ents)] == ["TrP"]

    def test_labels_attached(self):
        a, b, c = span(0, 0, "treatment"), span(2, 2), span(4, 4)
        cands = label_candidates(generate_candidate_pairs([a, b, c]), [RelationInstance(a, b, "TrAP")])
        assert [x.label for x in cands] == ["TrAP", "None-TrP", "None-PP"]

    @given(st.lists(st.tuples(st.integers(0, 20), st.sampled_from(DEFAULT_SCHEMA.entity_types)),
                    max_size=8, unique_by=lambda t: t[0]))
    def test_deterministic_and_sorted(self, items):
        ents = [span(i, i, t) for i, t in items]
        a = generate_candidate_pairs(ents)
        assert a == generate_candidate_pairs(list(reversed(ents)))
        assert a == sorted(a, key=lambda c: (c.first.start, c.second.start))
        assert all(c.first.end < c.second.start for c in a)


def _labelled(spec):
    """``{family: (n_pos, n_neg)}`` -> candidates and labels, families interleaved."""
    cands, labels = [], []
    for fam, (n_pos, n_neg) in spec.items():
        f = DEFAULT_SCHEMA.family(fam)
        for k in range(n_pos + n_neg):
            lab = f.positive_labels[k % len(f.positive_labels)] if k < n_pos else f.none_label
            cands.append(RelationCandidate(span(0, 0), span(k + 2, k + 2), fam, lab))
            labels.append(lab)
    return cands, labels


class TestDownsample:
    def test_pp_example(self, rng):
        cands, labels = _labelled({"PP": (3, 20)})
        kept = downsample_negatives(cands, labels, RATIOS, rng)
        n_neg = sum(c.label == "None-PP" for c in kept)
        assert len(kept) - n_neg == 3 and n_neg == 12

    def test_cap_not_binding(self, rng):
        cands, labels = _labelled({"TrP": (5, 4)})
        assert downsample_negatives(cands, labels, RATIOS, rng) == cands

    def test_zero_positive_floor(self, rng):
        cands, labels = _labelled({"TeP": (0, 9), "PP": (0, 3)})
        kept = Counter(c.family for c in downsample_negatives(cands, labels, RATIOS, rng))
        assert kept == {"TeP": 5, "PP": 3}

    def test_order_preserved(self, rng):
        cands, labels = _labelled({"PP": (2, 30), "TrP": (4, 10)})
        kept = downsample_negatives(cands, labels, RATIOS, rng)
        pos = [cands.index(c) for c in kept]
        assert pos == sorted(pos)

    def test_uniform_selection(self):
        cands, labels = _labelled({"PP": (3, 20)})
        rng = np.random.default_rng(0)
        hits = Counter()
        for _ in range(1000):
            hits.update(c for c in downsample_negatives(cands, labels, RATIOS, rng) if c.label == "None-PP")
        # each negative is kept with probability 12/20; 6 sigma band
        for c in cands[3:]:
            assert abs(hits[c] - 600) < 6 * np.sqrt(1000 * 0.6 * 0.4)


def test_re_gradient_locality(small_sentences):
    """Only rows inside some candidate's sentence receive RE-loss gradient."""
    sents = small_sentences[:6]
    bundle, batch = bundle_and_batch(tiny_config(), sents)
    rows_with = {b for b, _ in batch.candidates}
    assert rows_with and len(rows_with) < len(sents)
    _, re_loss, encoded = task_losses(bundle, batch, training=False)
    encoded.retain_grad()
    ad.backward(re_loss)
    g = np.abs(encoded.grad).sum(axis=-1)
    for b, n in enumerate(batch.lengths):
        if b in rows_with:
            assert np.all(g[b, :n] > 0)
        else:
            assert not g[b].any()
        assert not g[b, n:].any()
