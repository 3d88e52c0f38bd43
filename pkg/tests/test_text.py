import pytest
from hypothesis import given, strategies as st

from jointre.errors import AnnotationError, SequenceLengthError
from jointre.schema import ENTITY_TYPES
from jointre.text import (EntitySpan, TagSet, Vocabulary, decode_spans, encode_bio, make_sentence,
                          tokenize)


class TestTokenize:
    def test_punctuation_split(self):
        toks = tokenize("chest pain.")
        assert [t.text for t in toks] == ["chest", "pain", "."]
        assert [(t.start, t.end) for t in toks] == [(0, 5), (6, 10), (10, 11)]

    def test_empty(self):
        assert tokenize("") == []

    def test_double_space(self):
        toks = tokenize("a  b")
        assert [t.text for t in toks] == ["a", "b"]
        assert [(t.start, t.end) for t in toks] == [(0, 1), (3, 4)]

    def test_each_symbol_alone(self):
        assert [t.text for t in tokenize("x-ray, 5mg/day")] == ["x", "-", "ray", ",", "5mg", "/", "day"]

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60))
    def test_offsets_reconstruct_tokens(self, raw):
        prev = 0
        for t in tokenize(raw):
            assert raw[t.start:t.end] == t.text
            assert t.start >= prev and not t.text.isspace()
            prev = t.end


class TestBio:
    def test_single_span(self):
        assert encode_bio(3, [EntitySpan(0, 1, "problem")]) == ["B-problem", "I-problem", "O"]

    def test_no_spans(self):
        assert encode_bio(3, []) == ["O", "O", "O"]

    def test_two_spans(self):
        spans = [EntitySpan(0, 0, "test"), EntitySpan(2, 2, "problem")]
        assert encode_bio(3, spans) == ["B-test", "O", "B-problem"]

    def test_overlap_names_both(self):
        a, b = EntitySpan(0, 2, "test"), EntitySpan(2, 3, "problem")
        with pytest.raises(AnnotationError, match="overlap") as info:
            encode_bio(5, [a, b])
        assert str(a) in str(info.value) and str(b) in str(info.value)

    def test_decode_legal(self):
        assert decode_spans(["B-problem", "I-problem", "O"]) == [EntitySpan(0, 1, "problem")]

    def test_orphan_inside_opens_span(self):
        assert decode_spans(["O", "I-test", "O"]) == [EntitySpan(1, 1, "test")]

    def test_type_switch_starts_new_span(self):
        assert decode_spans(["B-test", "I-problem"]) == [EntitySpan(0, 0, "test"), EntitySpan(1, 1, "problem")]

    def test_tagset_order(self):
        assert TagSet().tags == ["O", "B-problem", "I-problem", "B-test", "I-test", "B-treatment", "I-treatment"]

    def test_bad_span_bounds(self):
        with pytest.raises(AnnotationError):
            EntitySpan(3, 2, "test")


@st.composite
def tokens_and_spans(draw):
    n = draw(st.integers(0, 25))
    spans, i = [], 0
    while i < n:
        if draw(st.booleans()):
            end = draw(st.integers(i, min(n - 1, i + 4)))
            spans.append(EntitySpan(i, end, draw(st.sampled_from(ENTITY_TYPES))))
            i = end + 1
        else:
            i += 1
    return n, spans


@given(tokens_and_spans())
def test_bio_roundtrip(case):
    n, spans = case
    assert decode_spans(encode_bio(n, spans)) == spans


@given(st.lists(st.sampled_from(TagSet().tags), max_size=30))
def test_repair_total_and_wellformed(tags):
    spans = decode_spans(tags)
    assert all(0 <= s.start <= s.end < len(tags) for s in spans)
    assert all(a.end < b.start for a, b in zip(spans, spans[1:]))
    # repaired output is a fixed point
    assert decode_spans(encode_bio(len(tags), spans)) == spans


class TestVocabulary:
    def test_reserved_ids_and_floor(self):
        v = Vocabulary.build([["Pain", "pain", "fever"], ["cough", "cough"]])
        assert v.itos[:2] == ["<pad>", "<unk>"]
        assert v.lookup("PAIN") == v.lookup("pain") >= 2
        assert v.lookup("fever") == 1  # seen once, below the floor

    def test_no_lowercase(self):
        v = Vocabulary.build([["A", "A", "a"]], lowercase=False)
        assert v.lookup("A") == 2 and v.lookup("a") == 1

    def test_file_roundtrip_bit_exact(self, tmp_path):
        v = Vocabulary.build([["b", "a", "b", "a", "c", "c", "c"]])
        v.save(tmp_path / "vocab.txt")
        raw = (tmp_path / "vocab.txt").read_bytes()
        assert raw == b"<pad>\n<unk>\nc\na\nb\n"
        back = Vocabulary.load(tmp_path / "vocab.txt")
        assert back == v
        back.save(tmp_path / "again.txt")
        assert (tmp_path / "again.txt").read_bytes() == raw

    def test_file_line_equals_id(self, tmp_path):
        v = Vocabulary(["x", "y"])
        for i, line in enumerate(v.to_text().splitlines()):
            assert v.stoi[line] == i

    def test_missing_reserved_lines(self):
        with pytest.raises(ValueError):
            Vocabulary.from_text("x\ny\n")

    @given(st.lists(st.text(alphabet="abcXYZ", min_size=1, max_size=4), max_size=30))
    def test_ids_dense(self, toks):
        v = Vocabulary.build([toks], min_freq=1)
        assert sorted(v.stoi.values()) == list(range(len(v)))
        assert Vocabulary.from_text(v.to_text()) == v


class TestSentence:
    def test_ids_match_tokens(self):
        v = Vocabulary(["chest", "pain"])
        s = make_sentence("Chest pain .", v)
        assert s.token_ids == (2, 3, 1)

    def test_too_long_rejected(self):
        with pytest.raises(SequenceLengthError, match="129"):
            make_sentence(" ".join(["w"] * 129))

    def test_span_past_end(self):
        with pytest.raises(AnnotationError):
            make_sentence("a b", entities=[EntitySpan(1, 2, "test")])

    def test_immutable(self):
        s = make_sentence("a b")
        with pytest.raises(AttributeError):
            s.raw_text = "c"
