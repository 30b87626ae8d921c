"""Trace matrix tests: recording, totals, exports and round-trips."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyne import (
    DecodeParams,
    FormatError,
    Reduce,
    ToyModelSpec,
    TraceMatrix,
    Vocab,
    beam_search,
    make_toy_model,
    sequence_score,
)
from dyne.seqmodel import BOS_ID, EOS_ID

from conftest import random_inputs, random_toy_model

AB = Vocab.from_content(["a", "b"])
A, B = 3, 4

finite_or_neginf = st.one_of(
    st.floats(min_value=-50.0, max_value=0.0, allow_nan=False),
    st.just(-math.inf),
)


def small_trace() -> TraceMatrix:
    trace = TraceMatrix(input_labels=("doc0", "doc1"))
    trace.record_step(A, "a", -1.5, [-1.0, -2.0])
    trace.record_step(B, "b", -3.5, [-3.0, -4.0])
    return trace


class TestRecording:
    def test_append_grows_by_one(self):
        trace = TraceMatrix(input_labels=("x",))
        assert len(trace) == 0
        trace.record_step(A, "a", -1.0, [-1.0])
        assert len(trace) == 1

    def test_consistency_of_recorded_row(self):
        trace = TraceMatrix(input_labels=("doc0", "doc1"))
        per = [math.log(0.5), math.log(0.25)]
        combined = sum(per) / 2
        trace.record_step(A, "a", combined, per)
        row = trace.rows[0]
        assert row.combined == pytest.approx(-1.0397207708399179, abs=1e-12)
        assert abs(row.combined - np.mean(row.per_input)) <= 1e-9

    def test_width_mismatch_leaves_trace_unchanged(self):
        trace = small_trace()
        with pytest.raises(ValueError, match="per-input scores"):
            trace.record_step(A, "a", -1.0, [-1.0])
        assert len(trace) == 2


class TestTotals:
    def test_column_sums(self):
        assert small_trace().input_totals() == [-4.0, -6.0]

    def test_combined_total(self):
        assert small_trace().combined_total() == -5.0

    def test_empty_trace_rejected(self):
        empty = TraceMatrix(input_labels=("x",))
        with pytest.raises(ValueError, match="empty"):
            empty.input_totals()
        with pytest.raises(ValueError, match="empty"):
            empty.combined_total()

    def test_single_input_totals_equal_raw_score(self):
        model = make_toy_model(ToyModelSpec(1.0, 1.0, {}, AB))
        raw, trace = sequence_score(model, [(A, A, B)], (A, EOS_ID))
        assert trace.input_totals() == pytest.approx([raw], abs=1e-12)

    def test_duplicated_inputs_have_equal_totals(self):
        model = make_toy_model(ToyModelSpec(1.0, 1.0, {}, AB))
        _, trace = sequence_score(model, [(A, B)] * 3, (A, EOS_ID))
        totals = trace.input_totals()
        assert totals[0] == totals[1] == totals[2]


class TestExports:
    def test_csv_layout(self):
        trace = TraceMatrix(input_labels=("doc0", "doc1"))
        trace.record_step(A, "a", -1.0, [-1.0, -1.0])
        lines = trace.to_csv().splitlines()
        assert len(lines) == 2
        assert lines[0] == "timestep,token,combined,doc0,doc1"
        assert lines[1].split(",")[:2] == ["0", "a"]

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError, match="unknown trace format"):
            small_trace().export("xml")

    def test_json_schema_fields(self):
        doc = json.loads(small_trace().to_json())
        assert set(doc) == {"input_labels", "rows"}
        assert doc["input_labels"] == ["doc0", "doc1"]
        row = doc["rows"][0]
        assert set(row) == {"timestep", "token_id", "token", "combined", "scores"}
        assert row["timestep"] == 0

    def test_csv_round_trip_with_vocab(self):
        trace = small_trace()
        again = TraceMatrix.from_csv(trace.to_csv(), vocab=AB)
        assert again == trace

    def test_json_round_trip(self):
        trace = small_trace()
        assert TraceMatrix.from_json(trace.to_json()) == trace

    @given(
        st.lists(
            st.tuples(finite_or_neginf, st.lists(finite_or_neginf, min_size=2, max_size=2)),
            min_size=1,
            max_size=20,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_round_trips_are_exact(self, rows):
        trace = TraceMatrix(input_labels=("doc0", "doc1"))
        for i, (combined, per) in enumerate(rows):
            trace.record_step(A if i % 2 else B, "a" if i % 2 else "b", combined, per)
        assert TraceMatrix.from_csv(trace.to_csv(), vocab=AB) == trace
        assert TraceMatrix.from_json(trace.to_json()) == trace

    def test_csv_parse_errors(self):
        with pytest.raises(FormatError, match="header"):
            TraceMatrix.from_csv("nope,nope\n")
        with pytest.raises(FormatError, match="line 2"):
            TraceMatrix.from_csv("timestep,token,combined,doc0\n0,a\n")
        with pytest.raises(FormatError, match="empty"):
            TraceMatrix.from_csv("")


class TestDecodeTraces:
    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_reduce_consistency_per_row(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        reduce = Reduce.MEAN_LOGPROB if rng.random() < 0.5 else Reduce.MEAN_PROB
        params = DecodeParams(beam_size=3, max_len=4, min_len=1, reduce=reduce)
        for hyp in beam_search(model, inputs, params):
            for row in hyp.trace.rows:
                per = np.array(row.per_input)
                if reduce is Reduce.MEAN_LOGPROB:
                    expected = np.mean(per)
                else:
                    top = np.max(per)
                    expected = (
                        -math.inf
                        if top == -math.inf
                        else top + math.log(np.mean(np.exp(per - top)))
                    )
                if math.isinf(expected):
                    assert row.combined == expected
                else:
                    assert abs(row.combined - expected) <= 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_combined_column_sums_to_raw_score(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        params = DecodeParams(beam_size=3, max_len=4, min_len=0)
        for hyp in beam_search(model, inputs, params):
            assert abs(hyp.trace.combined_total() - hyp.raw_score) <= 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_cells_reproducible_by_independent_scoring(self, seed):
        rng = np.random.default_rng(seed)
        model, vocab = random_toy_model(rng)
        inputs = random_inputs(rng, vocab)
        params = DecodeParams(beam_size=2, max_len=4, min_len=1)
        hyp = beam_search(model, inputs, params)[0]
        prefix = (BOS_ID,)
        for row in hyp.trace.rows:
            for i, x in enumerate(inputs):
                assert row.per_input[i] == float(model.score_next(x, prefix)[row.token_id])
            prefix = prefix + (row.token_id,)
