import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from genkt import corpus, synth
from genkt.corpus import (
    DEFAULT_PRIVATE_WORDS,
    EOS,
    SPACE,
    VOCAB,
    CorpusError,
    EmptyCorpusError,
    partition_private,
    preprocess,
    shard,
    split_corpus,
)


def enc(text):
    return VOCAB.encode(text)


class TestVocab:
    def test_size_and_layout(self):
        assert len(VOCAB) == 30
        assert VOCAB.encode("AZ").tolist() == [0, 25]
        assert [SPACE, EOS] == [26, 27]
        assert VOCAB.encode("'.").tolist() == [28, 29]

    @given(st.lists(st.integers(0, 29), max_size=200))
    def test_bijection(self, ids):
        ids = np.array(ids, dtype=np.uint8)
        np.testing.assert_array_equal(VOCAB.encode(VOCAB.decode(ids)), ids)

    def test_unknown_symbol(self):
        with pytest.raises(CorpusError):
            VOCAB.encode("a")

    def test_hash_stable(self):
        assert VOCAB.hash == corpus.Vocab().hash
        assert len(VOCAB.hash) == 16


class TestPreprocess:
    def test_upper_case_and_newlines(self):
        assert VOCAB.decode(preprocess("Hello world\nBye.")) == "HELLO WORLD\nBYE."

    def test_other_characters_become_one_space(self):
        assert VOCAB.decode(preprocess("IT'S 3,000 -- ok!!  fine")) == "IT'S OK FINE"

    def test_spaces_at_line_edges_and_blank_lines_removed(self):
        assert VOCAB.decode(preprocess("  A \n\n\n  B  \n")) == "A\nB\n"

    def test_empty_result_rejected(self):
        with pytest.raises(EmptyCorpusError):
            preprocess("1234 !!")

    @given(st.text(max_size=300))
    def test_output_always_valid(self, text):
        try:
            ids = preprocess(text)
        except EmptyCorpusError:
            return
        assert ids.dtype == np.uint8 and ids.max() < 30
        s = VOCAB.decode(ids)
        assert "  " not in s and "\n\n" not in s

    def test_idempotent(self):
        once = VOCAB.decode(preprocess("Mixed case, numbers 12 and\n\nlines."))
        np.testing.assert_array_equal(preprocess(once), enc(once))


class TestSplit:
    def test_cuts_on_sentence_boundaries(self):
        s = enc("".join(f"SENTENCE {chr(65 + k % 26)}\n" for k in range(200)))
        sp = split_corpus(s, (0.8, 0.1, 0.1))
        for part in (sp.train, sp.valid):
            assert part[-1] == EOS
        np.testing.assert_array_equal(np.concatenate([sp.train, sp.valid, sp.test]), s)
        assert abs(sp.train.size / s.size - 0.8) < 0.02

    def test_every_part_nonempty(self):
        sp = split_corpus(enc("A\nB\nC\n"), (0.98, 0.01, 0.01))
        assert all(x.size for x in (sp.train, sp.valid, sp.test))

    @pytest.mark.parametrize("fr", [(0.5, 0.5, 0.0), (0.5, 0.3, 0.3), (1.0,)])
    def test_bad_fractions(self, fr):
        with pytest.raises(CorpusError):
            split_corpus(enc("A\nB\nC\nD\n"), fr)

    def test_too_few_sentences(self):
        with pytest.raises(CorpusError):
            split_corpus(enc("A\nB\n"))


class TestPartition:
    def test_whole_word_match(self):
        s = enc("IN JANUARY SALES ROSE.\nJANUARYX IS NOT A MONTH.\nMONDAY'S PLAN.\nNONE HERE.\n")
        pp = partition_private(s)
        assert VOCAB.decode(pp.private_sentences) == "IN JANUARY SALES ROSE.\nMONDAY'S PLAN.\n"
        assert VOCAB.decode(pp.public_sentences) == "JANUARYX IS NOT A MONTH.\nNONE HERE.\n"

    def test_default_word_list(self):
        assert {"JANUARY", "DECEMBER", "MONDAY", "SUNDAY", "SPRING", "AUTUMN"} <= DEFAULT_PRIVATE_WORDS
        assert len(DEFAULT_PRIVATE_WORDS) == 23

    def test_partition_is_complete(self):
        s = preprocess(synth.newswire_text(20_000, seed=3))
        pp = partition_private(s)
        assert pp.public_sentences.size + pp.private_sentences.size == s.size
        for sent in corpus.sentences(pp.public_sentences):
            assert not corpus.contains_word(sent, DEFAULT_PRIVATE_WORDS)

    def test_bad_word_list(self):
        with pytest.raises(CorpusError):
            partition_private(enc("A\n"), ["lower"])
        with pytest.raises(CorpusError):
            partition_private(enc("A\n"), [])


class TestShard:
    def test_disjoint_and_complete(self):
        s = preprocess(synth.newswire_text(10_000, seed=1))
        parts = shard(s, 4, seed=2)
        assert len(parts) == 4
        got = sorted(VOCAB.decode(x) for p in parts for x in corpus.sentences(p))
        want = sorted(VOCAB.decode(x) for x in corpus.sentences(s))
        assert got == want

    def test_seeded(self):
        s = preprocess(synth.newswire_text(5_000, seed=1))
        a, b = shard(s, 3, seed=9), shard(s, 3, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_many_shards(self):
        with pytest.raises(CorpusError):
            shard(enc("A\nB\n"), 3)


class TestFiles:
    def test_corpus_roundtrip(self, tmp_path):
        s = preprocess(synth.newswire_text(3_000, seed=4))
        corpus.write_corpus(tmp_path / "c.txt", s)
        np.testing.assert_array_equal(corpus.read_corpus(tmp_path / "c.txt"), s)

    def test_metadata_roundtrip(self, tmp_path):
        corpus.write_metadata(tmp_path / "m.txt", {"a": 1, "words": {"B", "A"}})
        assert corpus.read_metadata(tmp_path / "m.txt") == {"a": "1", "words": "A,B"}


class TestSynth:
    def test_deterministic(self):
        assert synth.newswire_text(2_000, seed=5) == synth.newswire_text(2_000, seed=5)

    def test_private_share_close_to_target(self):
        s = preprocess(synth.newswire_text(200_000, seed=0))
        pp = partition_private(s)
        share = pp.private_sentences.size / s.size
        assert 0.10 < share < 0.20

    def test_no_month_word_in_public_phrases(self):
        s = preprocess(synth.newswire_text(100_000, seed=0))
        public = VOCAB.decode(partition_private(s).public_sentences)
        for w in ("MAY", "MARCH", "JANUARY"):
            assert f" {w} " not in public
