import numpy as np
import pytest

from jointre.config import EncoderConfig, NerConfig, ReConfig, RunConfig, TrainConfig
from jointre.i2b2 import document_to_sentences, generate_synthetic_corpus
from jointre.model import ModelBundle, make_batch
from jointre.text import TagSet, Vocabulary
from jointre.trainer import labelled_candidates

_acceptance = []
_measured = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.outcome, report.nodeid.split("::")[-1]))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, name in _acceptance:
        detail = _measured.get(name, "")
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}  {detail}".rstrip())


@pytest.fixture
def measured(request):
    """Record the measured value of an acceptance criterion for the summary line."""
    def note(text):
        _measured[request.node.name] = text
        print(text)
    return note


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(**train):
    base = dict(learning_rate=1e-3, batch_size=8, max_epochs=3, early_stop_patience=2, seed=3)
    base.update(train)
    return RunConfig(
        encoder=EncoderConfig(n_layers=1, n_heads=2, model_dim=16, feedforward_dim=32, dropout_rate=0.1),
        ner=NerConfig(rnn_layers=2, rnn_hidden_dim=8, classifier_hidden_dim=8),
        re=ReConfig(hidden_dim=16),
        train=TrainConfig(**base),
    )


def bundle_and_batch(cfg, sentences, min_freq=1):
    """Fresh bundle over a vocabulary of ``sentences`` and one batch with every gold-labelled candidate."""
    vocab = Vocabulary.build([s.tokens for s in sentences], min_freq=min_freq)
    sents = [s.with_ids(vocab) for s in sentences]
    bundle = ModelBundle(cfg, vocab)
    per_row = [[] for _ in sents]
    for i, c in labelled_candidates(sents, bundle.schema):
        per_row[i].append(c)
    return bundle, make_batch(sents, TagSet(), per_row)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(11, 12)


@pytest.fixture(scope="session")
def small_sentences(small_corpus):
    return [s for d in small_corpus for s in document_to_sentences(d)]


def random_eval_corpus(r, max_relations=20):
    """Random gold/predicted spans and relations over a few units, with deliberate near-misses."""
    from jointre.schema import DEFAULT_SCHEMA
    from jointre.text import EntitySpan, RelationInstance

    labels = list(DEFAULT_SCHEMA.all_labels)
    types = list(DEFAULT_SCHEMA.entity_types)
    n_units = int(r.integers(1, 5))
    budget = int(r.integers(0, max_relations + 1))

    def spans():
        return [EntitySpan(int(a), int(a + r.integers(0, 2)), types[r.integers(3)])
                for a in r.integers(0, 12, size=r.integers(0, 6))]

    def rels(pool, k):
        if len(pool) < 2:
            return []
        out = []
        for _ in range(k):
            i, j = sorted(r.choice(len(pool), size=2, replace=False))
            out.append(RelationInstance(pool[i], pool[j], labels[r.integers(len(labels))]))
        return out

    gold_sp, pred_sp, gold_rel, pred_rel = [], [], [], []
    for u in range(n_units):
        g = spans()
        # predictions: mostly copies of gold, some perturbed, some invented
        p = [s if r.random() < 0.7 else EntitySpan(s.start, s.end + 1, s.entity_type) for s in g]
        p += spans()[: r.integers(0, 3)]
        k = budget // n_units
        gr = rels(g, k)
        pr = [x if r.random() < 0.6 else RelationInstance(x.first, x.second, labels[r.integers(len(labels))])
              for x in gr] + rels(g + p, int(r.integers(0, 3)))
        gold_sp.append(g)
        pred_sp.append(p)
        gold_rel.append(gr)
        pred_rel.append(pr)
    return gold_sp, pred_sp, gold_rel, pred_rel
