import json
import math
import zlib

import numpy as np
import pytest

from gramtraj.corpus import build_vocab
from gramtraj.harness import (
    CallableScorer,
    DecisionMatrix,
    MinimalPair,
    NGramScorer,
    NeuralScorer,
    evaluate_checkpoint,
    decisions_entry,
    frame_sentence,
    load_suite,
    pack_bits,
    score_pair,
    unpack_bits,
)
from gramtraj.neural import ModelConfig, build_model
from gramtraj.ngram import train_ngram


class TestLoadSuite:
    def test_blimp_style_line(self, tmp_path):
        d = tmp_path / "blimp"
        d.mkdir()
        line = {
            "sentence_good": "Galileo had talked to Bell.",
            "sentence_bad": "This car had talked to Bell.",
            "UID": "animate_subject_passive",
            "linguistics_term": "argument_structure",
            "field": "syntax",
        }
        (d / "animate_subject_passive.jsonl").write_text(json.dumps(line) + "\n")
        suite = load_suite(d, format="blimp_jsonl")
        assert suite.uids == ["animate_subject_passive"]
        pair = suite.challenges[0].pairs[0]
        assert pair.sentence_good == "Galileo had talked to Bell."
        assert suite.challenges[0].field == "syntax"

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError, match="no challenges found"):
            load_suite(tmp_path, format="blimp_jsonl")

    def test_missing_key_names_file_and_line(self, tmp_path):
        d = tmp_path / "blimp"
        d.mkdir()
        f = d / "x.jsonl"
        ok = json.dumps(
            dict(sentence_good="a", sentence_bad="b", UID="x", linguistics_term="t", field="f")
        )
        f.write_text(ok + "\n" + json.dumps({"sentence_good": "a"}) + "\n")
        with pytest.raises(ValueError, match=r"x\.jsonl:2: missing key 'sentence_bad'"):
            load_suite(d, format="blimp_jsonl")

    def test_duplicate_uid_across_files(self, tmp_path):
        d = tmp_path / "blimp"
        d.mkdir()
        line = json.dumps(
            dict(sentence_good="a", sentence_bad="b", UID="dup", linguistics_term="t", field="f")
        )
        (d / "a.jsonl").write_text(line + "\n")
        (d / "b.jsonl").write_text(line + "\n")
        with pytest.raises(ValueError, match="duplicate challenge uid 'dup'"):
            load_suite(d, format="blimp_jsonl")

    def test_synthetic_suite_counts(self, synth_suite):
        assert len(synth_suite.challenges) == 8
        assert synth_suite.total_pairs == 1600
        assert all(len(c.pairs) == 200 for c in synth_suite.challenges)
        assert synth_suite.uids == sorted(synth_suite.uids)


class TestScorePair:
    @pytest.fixture
    def vocab(self):
        return build_vocab(["a b c d e f ."], max_size=20)

    def test_constant_scorer_ties_to_zero(self, vocab):
        scorer = CallableScorer(lambda ids: -float(len(ids)))
        pair = MinimalPair("a b c", "d e f", 0)
        decision, sg, sb = score_pair(scorer, pair, vocab)
        assert decision == 0
        assert sg.value == sb.value

    def test_unigram_prefers_more_frequent_token(self, small_corpus_setup):
        vocab, corpus = small_corpus_setup
        model = train_ngram(corpus, 1, vocab.size)
        common, rare = vocab.tokens[3], vocab.tokens[-1]
        assert vocab.counts[3] > vocab.counts[-1]
        pair = MinimalPair(f"the {common} .", f"the {rare} .", 0)
        decision, _, _ = score_pair(NGramScorer(model), pair, vocab)
        assert decision == 1

    def test_normalized_comparison(self, vocab):
        # 5 tokens at -10.0 total vs 6 tokens at -12.6: per-token -2.0 vs -2.1
        def fn(ids):
            return -2.0 * 5 if len(ids) == 7 else -2.1 * 6

        scorer = CallableScorer(fn)
        pair = MinimalPair("a b c d e", "a b c d e f", 0)
        decision, sg, sb = score_pair(scorer, pair, vocab, norm="always")
        assert (sg.value, sb.value) == (-2.0, -2.1)
        assert decision == 1
        # raw totals would prefer the shorter sentence either way
        decision_raw, _, _ = score_pair(scorer, pair, vocab, norm="never")
        assert decision_raw == 1

    def test_when_lengths_differ_policy(self, vocab):
        seen = {}

        def fn(ids):
            seen[len(ids)] = True
            return -1.0 * len(ids)

        pair_eq = MinimalPair("a b", "c d", 0)
        decision, sg, _ = score_pair(CallableScorer(fn), pair_eq, vocab, norm="when_lengths_differ")
        assert not sg.normalized and decision == 0
        pair_ne = MinimalPair("a b c", "a b", 1)
        _, sg, sb = score_pair(CallableScorer(fn), pair_ne, vocab, norm="when_lengths_differ")
        assert sg.normalized and sb.normalized

    def test_empty_sentence_errors(self, vocab):
        with pytest.raises(ValueError, match="empty tokenization"):
            score_pair(CallableScorer(lambda ids: 0.0), MinimalPair("   ", "a", 0), vocab)

    def test_frame(self, vocab):
        ids, n = frame_sentence("a b", vocab)
        assert n == 2
        assert ids[0] == 1 and ids[-1] == 2  # <bos> .. <eos>


class MapScorer:
    """Test helper: fixed score per framed sentence."""

    vocab_hash = None

    def __init__(self, table):
        self.table = table

    def sentence_logprob(self, ids):
        return self.table[tuple(int(t) for t in ids)]


@pytest.fixture(scope="module")
def covering_vocab(synth_suite):
    """Vocabulary covering every suite token, so framed ids are collision-free."""
    texts = [p.sentence_good + " " + p.sentence_bad for c in synth_suite.challenges for p in c.pairs]
    return build_vocab(texts, max_size=50_000)


class TestEvaluateCheckpoint:
    def test_oracle_scorer_scores_one(self, synth_suite, covering_vocab):
        vocab = covering_vocab
        table = {}
        for ch in synth_suite.challenges:
            for p in ch.pairs:
                table[tuple(frame_sentence(p.sentence_good, vocab)[0])] = 0.0
                table[tuple(frame_sentence(p.sentence_bad, vocab)[0])] = -1.0
        pv, bits, _ = evaluate_checkpoint(MapScorer(table), synth_suite, vocab)
        assert pv.mean_accuracy == 1.0
        assert all(v == 1.0 for v in pv.accuracies.values())
        assert bits.all()

    def test_coin_flip_scorer_near_chance(self, synth_suite, covering_vocab):
        vocab = covering_vocab

        def coin(ids):
            h = zlib.crc32(np.asarray(ids, dtype=np.int64).tobytes() + b"seed7")
            return h / 2**32

        pv, _, _ = evaluate_checkpoint(CallableScorer(coin), synth_suite, vocab)
        for uid, acc in pv.accuracies.items():
            assert 0.38 <= acc <= 0.62, (uid, acc)

    def test_uniform_model_perplexity_is_vocab_size(self, small_corpus_setup, synth_suite):
        vocab, corpus = small_corpus_setup
        cfg = ModelConfig(width=16, layers=1, heads=2, seq_len=32, vocab=vocab.size)
        model = build_model(cfg)
        for p in model.parameters().values():
            p.fill(0.0)
        scorer = NeuralScorer(model, vocab_hash=corpus.vocab_hash)
        _, _, ppl = evaluate_checkpoint(scorer, synth_suite, vocab, dev_ids=corpus.dev[:2000])
        assert ppl == pytest.approx(vocab.size, rel=1e-6)

    def test_vocab_mismatch_errors(self, synth_suite, small_corpus_setup):
        vocab, _ = small_corpus_setup
        scorer = CallableScorer(lambda ids: 0.0, vocab_hash="deadbeef")
        with pytest.raises(ValueError, match="vocabulary mismatch"):
            evaluate_checkpoint(scorer, synth_suite, vocab)

    def test_monotone_transform_invariance(self, synth_suite, small_corpus_setup):
        vocab, corpus = small_corpus_setup
        model = train_ngram(corpus, 2, vocab.size)
        base = NGramScorer(model)
        warped = CallableScorer(lambda ids, b=base: 3.0 * b.sentence_logprob(ids) + 11.0)
        pv2, bits2, _ = evaluate_checkpoint(warped, synth_suite, vocab, norm="never")
        pv1n, bits1n, _ = evaluate_checkpoint(base, synth_suite, vocab, norm="never")
        assert np.array_equal(bits1n, bits2)
        assert pv1n.accuracies == pv2.accuracies

    def test_repeat_evaluation_identical(self, synth_suite, small_corpus_setup):
        vocab, corpus = small_corpus_setup
        model = train_ngram(corpus, 2, vocab.size)
        _, bits1, _ = evaluate_checkpoint(NGramScorer(model), synth_suite, vocab)
        _, bits2, _ = evaluate_checkpoint(NGramScorer(model), synth_suite, vocab)
        assert np.array_equal(bits1, bits2)

    def test_mean_accuracy_unweighted(self, synth_suite, small_corpus_setup):
        vocab, corpus = small_corpus_setup
        model = train_ngram(corpus, 1, vocab.size)
        pv, _, _ = evaluate_checkpoint(NGramScorer(model), synth_suite, vocab)
        assert pv.mean_accuracy == pytest.approx(np.mean(list(pv.accuracies.values())))


class TestDecisionPacking:
    def test_roundtrip(self):
        bits = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1], dtype=np.uint8)
        assert np.array_equal(unpack_bits(pack_bits(bits), len(bits)), bits)

    def test_decisions_entry_shape(self, synth_suite):
        bits = np.zeros(synth_suite.total_pairs, dtype=np.uint8)
        entry = decisions_entry("m", 7, synth_suite, bits)
        assert entry["step"] == 7
        assert set(entry["challenges"]) == set(synth_suite.uids)
        assert all(v["n"] == 200 for v in entry["challenges"].values())

    def test_matrix_validation(self):
        with pytest.raises(ValueError, match="shape"):
            DecisionMatrix(np.zeros((3, 2)), ["a", "b"], ["x", "y"])
        with pytest.raises(ValueError, match="0/1"):
            DecisionMatrix(np.full((2, 2), 2), ["a", "b"], ["x", "y"])


class TestNeuralScorer:
    def test_batched_equals_single(self, small_corpus_setup):
        vocab, corpus = small_corpus_setup
        cfg = ModelConfig(width=16, layers=1, heads=2, seq_len=32, vocab=vocab.size, seed=5)
        scorer = NeuralScorer(build_model(cfg), vocab_hash=corpus.vocab_hash)
        rng = np.random.default_rng(0)
        seqs = [list(rng.integers(0, vocab.size, size=rng.integers(3, 12))) for _ in range(9)]
        batched = scorer.sentence_logprobs(seqs)
        single = [scorer.sentence_logprob(s) for s in seqs]
        assert batched == pytest.approx(single, abs=1e-9)

    def test_too_long_sentence_errors(self, small_corpus_setup):
        vocab, _ = small_corpus_setup
        cfg = ModelConfig(width=16, layers=1, heads=2, seq_len=4, vocab=vocab.size)
        scorer = NeuralScorer(build_model(cfg))
        with pytest.raises(ValueError, match="exceeds model seq_len"):
            scorer.sentence_logprob(list(range(4)) + [1, 1])

    def test_ngram_scorer_matches_chain(self, small_corpus_setup):
        vocab, corpus = small_corpus_setup
        model = train_ngram(corpus, 2, vocab.size)
        ids = [1, 5, 9, 4, 2]
        want = sum(
            math.log(model.conditional_prob(ids[max(0, i - 1) : i], ids[i]))
            for i in range(1, len(ids))
        )
        assert NGramScorer(model).sentence_logprob(ids) == pytest.approx(want, abs=1e-12)
