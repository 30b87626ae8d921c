"""Decoder tests: reduce functions, beam search, the brute-force oracle."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyne import (
    DecodeError,
    DecodeParams,
    Hypothesis,
    Reduce,
    ToyModelSpec,
    UniformModel,
    Vocab,
    beam_search,
    brute_force_search,
    ensemble_step,
    make_toy_model,
    reduce_mean_logprob,
    reduce_mean_prob,
    sequence_score,
)
from dyne.seqmodel import BOS_ID, EOS_ID, UNK_ID

from conftest import exhaustive_beam_size, plain_beam_search, random_inputs, random_toy_model

AB = Vocab.from_content(["a", "b"])
A, B = 3, 4


def copy_model(vocab=AB, k=1.0):
    return make_toy_model(ToyModelSpec(1.0, k, {}, vocab))


def skewed_model():
    """Context-free model with p(a)=0.7, p(b)=0.2, p(EOS)=0.1 on the fixed input."""
    return copy_model(), (A,) * 6 + (B,)


def random_probs(rng: np.random.Generator, width: int, mask_rate: float = 0.0):
    probs = rng.dirichlet(np.ones(width))
    if mask_rate:
        drop = rng.random(width) < mask_rate
        if drop.all():
            drop[int(rng.integers(width))] = False
        probs = np.where(drop, 0.0, probs)
        probs = probs / probs.sum()
    with np.errstate(divide="ignore"):
        return np.log(probs)


class TestReduceMeanLogprob:
    def test_identical_vectors_exact(self):
        v = np.log(np.array([0.3, 0.2, 0.5]))
        assert np.array_equal(reduce_mean_logprob([v, v.copy(), v.copy()]), v)

    def test_hand_example_exact(self):
        out = reduce_mean_logprob([np.array([-1.0, -2.0]), np.array([-3.0, -2.0])])
        assert np.array_equal(out, np.array([-2.0, -2.0]))

    def test_singleton_exact(self):
        v = np.array([-0.5, -1.5, -np.inf])
        assert np.array_equal(reduce_mean_logprob([v]), v)

    def test_masked_entries_propagate(self):
        out = reduce_mean_logprob([np.array([-1.0, -np.inf]), np.array([-1.0, -2.0])])
        assert out[1] == -np.inf

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            reduce_mean_logprob([])

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError, match="vocabulary size"):
            reduce_mean_logprob([np.zeros(2), np.zeros(3)])

    @given(st.integers(0, 10_000), st.integers(2, 5))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant_bitwise(self, seed, n):
        rng = np.random.default_rng(seed)
        vs = [random_probs(rng, 6, mask_rate=0.2) for _ in range(n)]
        base = reduce_mean_logprob(vs)
        perm = [vs[i] for i in rng.permutation(n)]
        assert np.array_equal(base, reduce_mean_logprob(perm))


class TestReduceMeanProb:
    def test_hand_example(self):
        out = reduce_mean_prob([np.log(np.array([0.2, 0.8])), np.log(np.array([0.6, 0.4]))])
        assert out == pytest.approx(np.log([0.4, 0.6]), abs=1e-12)

    def test_identical_vectors_exact(self):
        v = np.log(np.array([0.25, 0.75]))
        assert np.array_equal(reduce_mean_prob([v, v.copy()]), v)

    def test_uniform_stays_uniform(self):
        u = np.full(4, math.log(0.25))
        assert reduce_mean_prob([u, u.copy()]) == pytest.approx(u, abs=1e-12)

    def test_all_masked_column(self):
        out = reduce_mean_prob([np.array([-np.inf, 0.0]), np.array([-np.inf, 0.0])])
        assert out[0] == -np.inf and out[1] == 0.0

    @given(st.integers(0, 10_000), st.integers(2, 5))
    @settings(max_examples=50, deadline=None)
    def test_preserves_normalization(self, seed, n):
        rng = np.random.default_rng(seed)
        vs = [random_probs(rng, 5, mask_rate=0.2) for _ in range(n)]
        out = reduce_mean_prob(vs)
        total = np.sum(np.exp(out))
        assert total == pytest.approx(1.0, abs=1e-9)

    @given(st.integers(0, 10_000), st.integers(2, 5))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant_bitwise(self, seed, n):
        rng = np.random.default_rng(seed)
        vs = [random_probs(rng, 6, mask_rate=0.2) for _ in range(n)]
        base = reduce_mean_prob(vs)
        perm = [vs[i] for i in rng.permutation(n)]
        assert np.array_equal(base, reduce_mean_prob(perm))


class TestEnsembleStep:
    def test_duplicate_inputs_idempotent(self):
        model = copy_model()
        x = (A, A, B)
        for reduce in Reduce:
            alone = model.score_next(x, (BOS_ID,))
            combined, per = ensemble_step(model, [x, x], (BOS_ID,), reduce)
            assert np.array_equal(combined, alone)
            assert len(per) == 2

    def test_single_input_passthrough(self):
        model = copy_model()
        combined, per = ensemble_step(model, [(A,)], (BOS_ID,), Reduce.MEAN_PROB)
        assert np.array_equal(combined, per[0])

    def test_two_input_hand_arithmetic(self):
        # copy-only: p(a | "a a b") = 1/2 and p(a | "b") = 1/4
        model = copy_model()
        combined, _ = ensemble_step(model, [(A, A, B), (B,)], (BOS_ID,), Reduce.MEAN_LOGPROB)
        assert combined[A] == pytest.approx(-1.0397207708399179, abs=1e-12)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError, match="at least one input"):
            ensemble_step(copy_model(), [], (BOS_ID,))


class TestBeamSearch:
    def test_skewed_model_min_len_one(self):
        model, x = skewed_model()
        params = DecodeParams(beam_size=3, max_len=2, min_len=1)
        best = beam_search(model, [x], params)[0]
        assert best.tokens == (A, EOS_ID)
        assert best.raw_score == pytest.approx(math.log(0.7) + math.log(0.1), abs=1e-12)
        assert best.ranked_score == best.raw_score

    def test_skewed_model_min_len_zero(self):
        model, x = skewed_model()
        params = DecodeParams(beam_size=3, max_len=2, min_len=0)
        best = beam_search(model, [x], params)[0]
        assert best.tokens == (EOS_ID,)
        assert best.raw_score == pytest.approx(math.log(0.1), abs=1e-12)

    def test_results_sorted_and_finished(self):
        model, x = skewed_model()
        params = DecodeParams(beam_size=4, max_len=3, min_len=0)
        hyps = beam_search(model, [x], params)
        assert 1 <= len(hyps) <= 4
        scores = [h.ranked_score for h in hyps]
        assert scores == sorted(scores, reverse=True)
        for h in hyps:
            assert h.tokens[-1] == EOS_ID

    def test_lexicographic_tie_break(self):
        # Uniform model: every length-1 completion ties; UNK has the
        # smallest id among content candidates.
        model = UniformModel(AB)
        params = DecodeParams(beam_size=2, max_len=2, min_len=1)
        best = beam_search(model, [(A,)], params)[0]
        assert best.tokens == (UNK_ID, EOS_ID)

    def test_bos_never_generated(self):
        model = UniformModel(AB)  # assigns BOS nonzero probability
        params = DecodeParams(beam_size=8, max_len=4, min_len=0)
        for hyp in beam_search(model, [(A,)], params):
            assert BOS_ID not in hyp.tokens

    def test_repeat_ngram_blocking(self):
        model, x = skewed_model()
        params = DecodeParams(beam_size=4, max_len=6, min_len=4, block_repeat_ngram=2)
        for hyp in beam_search(model, [x], params):
            bigrams = list(zip(hyp.tokens, hyp.tokens[1:]))
            assert len(bigrams) == len(set(bigrams))

    def test_overconstrained_masks_raise(self):
        vocab = Vocab.from_content(["a"])
        model = copy_model(vocab)
        params = DecodeParams(beam_size=2, max_len=4, min_len=2, block_repeat_ngram=1)
        # the only content token is blocked after one use and EOS is still masked
        with pytest.raises(DecodeError, match="min_len"):
            beam_search(model, [(3,)], params)

    def test_determinism(self):
        rng = np.random.default_rng(99)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        params = DecodeParams(beam_size=3, max_len=4, min_len=1)
        first = beam_search(model, inputs, params)
        second = beam_search(model, inputs, params)
        assert [h.tokens for h in first] == [h.tokens for h in second]
        assert [h.raw_score for h in first] == [h.raw_score for h in second]

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_length_masking(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        max_len = int(rng.integers(2, 6))
        params = DecodeParams(
            beam_size=int(rng.integers(1, 5)),
            max_len=max_len,
            min_len=int(rng.integers(0, max_len)),
            reduce=Reduce.MEAN_LOGPROB if rng.random() < 0.5 else Reduce.MEAN_PROB,
        )
        for hyp in beam_search(model, inputs, params):
            assert params.min_len <= hyp.content_length <= params.max_len - 1

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_single_input_degenerates_to_plain_beam(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        x = random_inputs(rng, vocab, max_inputs=1)[0]
        max_len = int(rng.integers(2, 6))
        params = DecodeParams(
            beam_size=int(rng.integers(1, 5)),
            max_len=max_len,
            min_len=int(rng.integers(0, max_len)),
            reduce=Reduce.MEAN_LOGPROB if rng.random() < 0.5 else Reduce.MEAN_PROB,
        )
        ours = beam_search(model, [x], params)
        reference = plain_beam_search(model, x, params)
        assert [(h.tokens, h.raw_score, h.ranked_score) for h in ours] == reference

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_beam_monotone_in_width(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        max_len = int(rng.integers(2, 5))
        min_len = int(rng.integers(0, max_len))
        best_so_far = -np.inf
        widths = [1, 2, 3, exhaustive_beam_size(vocab, DecodeParams(
            beam_size=1, max_len=max_len, min_len=min_len))]
        for width in widths:
            params = DecodeParams(beam_size=width, max_len=max_len, min_len=min_len)
            top = beam_search(model, inputs, params)[0].raw_score
            assert top >= best_so_far - 1e-12
            best_so_far = max(best_so_far, top)


class TestBruteForce:
    def test_guards(self):
        big_vocab = Vocab.from_content([f"w{i}" for i in range(10)])
        with pytest.raises(ValueError, match="brute-force"):
            brute_force_search(UniformModel(big_vocab), [(3,)], DecodeParams(max_len=2))
        with pytest.raises(ValueError, match="brute-force"):
            brute_force_search(UniformModel(AB), [(3,)], DecodeParams(max_len=9, min_len=0))

    def test_single_content_token_copy_model(self):
        # {BOS, EOS, UNK, a} under the copy model: UNK carries zero
        # probability, so [a, EOS] is the only scoreable candidate.
        vocab = Vocab.from_content(["a"])
        model = copy_model(vocab)
        params = DecodeParams(beam_size=1, max_len=2, min_len=1)
        best = brute_force_search(model, [(3,)], params)
        assert best.tokens == (3, EOS_ID)

    def test_uniform_tie_prefers_smaller_ids(self):
        # Under the uniform model [UNK, EOS] and [a, EOS] tie exactly;
        # UNK has the smaller id.
        vocab = Vocab.from_content(["a"])
        model = UniformModel(vocab)
        params = DecodeParams(beam_size=1, max_len=2, min_len=1)
        best = brute_force_search(model, [(3,)], params)
        assert best.tokens == (UNK_ID, EOS_ID)

    def test_matches_hand_beam_example(self):
        model, x = skewed_model()
        params = DecodeParams(beam_size=3, max_len=2, min_len=1)
        beam = beam_search(model, [x], params)[0]
        oracle = brute_force_search(model, [x], params)
        assert beam.tokens == oracle.tokens
        assert beam.raw_score == oracle.raw_score

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_exhaustive_beam_equals_oracle(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        max_len = int(rng.integers(2, 6))
        params = DecodeParams(
            beam_size=1,
            max_len=max_len,
            min_len=int(rng.integers(0, max_len)),
            reduce=Reduce.MEAN_LOGPROB if rng.random() < 0.5 else Reduce.MEAN_PROB,
            length_penalty_alpha=float(rng.choice([0.0, 0.0, 0.5, 1.0])),
        )
        from dataclasses import replace

        params = replace(params, beam_size=exhaustive_beam_size(vocab, params))
        beam = beam_search(model, inputs, params)[0]
        oracle = brute_force_search(model, inputs, params)
        assert beam.tokens == oracle.tokens
        assert abs(beam.raw_score - oracle.raw_score) <= 1e-9


class TestSequenceScore:
    def test_summation(self):
        model, x = skewed_model()
        raw, trace = sequence_score(model, [x], (A, A, EOS_ID))
        expected = 2 * math.log(0.7) + math.log(0.1)
        assert raw == pytest.approx(expected, abs=1e-12)
        assert len(trace) == 3

    def test_bare_eos(self):
        model, x = skewed_model()
        raw, _ = sequence_score(model, [x], (EOS_ID,))
        assert raw == pytest.approx(math.log(0.1), abs=1e-12)

    def test_rescoring_reproduces_beam_scores(self):
        rng = np.random.default_rng(4)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        params = DecodeParams(beam_size=4, max_len=4, min_len=0)
        for hyp in beam_search(model, inputs, params):
            raw, _ = sequence_score(model, inputs, hyp.tokens, params.reduce)
            assert abs(raw - hyp.raw_score) <= 1e-9

    def test_mean_logprob_raw_equals_mean_of_input_totals(self):
        model = copy_model()
        inputs = [(A, A, B), (B, B)]
        raw, trace = sequence_score(model, inputs, (A, B, EOS_ID), Reduce.MEAN_LOGPROB)
        totals = trace.input_totals()
        assert raw == pytest.approx(sum(totals) / len(totals), abs=1e-9)

    def test_malformed_sequences_rejected(self):
        model, x = skewed_model()
        with pytest.raises(ValueError, match="end with the EOS"):
            sequence_score(model, [x], (A, B))
        with pytest.raises(ValueError, match="mid-sequence"):
            sequence_score(model, [x], (EOS_ID, A, EOS_ID))
        with pytest.raises(ValueError, match="BOS"):
            sequence_score(model, [x], (BOS_ID, A, EOS_ID))
        with pytest.raises(ValueError, match="empty"):
            sequence_score(model, [x], ())


class TestInvariances:
    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_input_permutation_leaves_decode_unchanged(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab, max_inputs=4)
        params = DecodeParams(
            beam_size=3,
            max_len=4,
            min_len=1,
            reduce=Reduce.MEAN_LOGPROB if rng.random() < 0.5 else Reduce.MEAN_PROB,
        )
        base = beam_search(model, inputs, params)
        shuffled = [inputs[i] for i in rng.permutation(len(inputs))]
        permuted = beam_search(model, shuffled, params)
        assert [(h.tokens, h.raw_score) for h in base] == [
            (h.tokens, h.raw_score) for h in permuted
        ]

    @given(st.integers(0, 10_000), st.integers(2, 5))
    @settings(max_examples=40, deadline=None)
    def test_duplicating_the_input_leaves_decode_unchanged(self, seed, k):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        x = random_inputs(rng, vocab, max_inputs=1)[0]
        params = DecodeParams(
            beam_size=3,
            max_len=4,
            min_len=1,
            reduce=Reduce.MEAN_LOGPROB if rng.random() < 0.5 else Reduce.MEAN_PROB,
        )
        single = beam_search(model, [x], params)
        copies = beam_search(model, [x] * k, params)
        assert [(h.tokens, h.raw_score) for h in single] == [
            (h.tokens, h.raw_score) for h in copies
        ]


class TestHypothesisType:
    def test_mean_logprob_consistency(self):
        model = copy_model()
        inputs = [(A, A, B), (B,)]
        combined, per = ensemble_step(model, inputs, (BOS_ID,), Reduce.MEAN_LOGPROB)
        hyp = Hypothesis(
            prefix=(BOS_ID, A),
            ensemble_score=float(combined[A]),
            per_input_scores=tuple(float(v[A]) for v in per),
        )
        assert abs(hyp.ensemble_score - np.mean(hyp.per_input_scores)) <= 1e-9
        assert hyp.content_length == 1

    def test_finished_flag_must_match_eos(self):
        with pytest.raises(ValueError, match="finished"):
            Hypothesis((BOS_ID, A), 0.0, (0.0,), finished=True)
        with pytest.raises(ValueError, match="finished"):
            Hypothesis((BOS_ID, EOS_ID), 0.0, (0.0,), finished=False)
        with pytest.raises(ValueError, match="BOS"):
            Hypothesis((A,), 0.0, (0.0,))

    def test_params_validation(self):
        with pytest.raises(ValueError, match="beam_size"):
            DecodeParams(beam_size=0)
        with pytest.raises(ValueError, match="min_len"):
            DecodeParams(max_len=3, min_len=3)
        with pytest.raises(ValueError, match="length_penalty"):
            DecodeParams(length_penalty_alpha=-1.0)
        with pytest.raises(ValueError, match="block_repeat_ngram"):
            DecodeParams(block_repeat_ngram=0)
