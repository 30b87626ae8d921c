"""Shared-prefix ensemble beam search.

One conditional model is applied independently to several inputs; at every
timestep the per-input next-token distributions are combined by a reduce
function into a single distribution, so all inputs extend the same output
prefix. The cumulative combined log-score of the chosen tokens is the
sequence score, and a brute-force enumerator over the same scoring rules
serves as an exact search oracle at desk scale.

Two reduce functions are provided: the arithmetic mean of log-probabilities
and the (log of the) arithmetic mean of probabilities. They generally
disagree; the log-space mean is the default because sequence scores compose
additively in log space. Both canonicalize their summation order, which
makes decoding bitwise invariant to permuting or duplicating inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError
from .provenance import TraceMatrix
from .seqmodel import (
    BOS_ID,
    EOS_ID,
    LogProbVector,
    SequenceModel,
    TokenSeq,
    check_token_seq,
)


class Reduce(enum.Enum):
    """How per-input distributions are combined at each timestep."""

    MEAN_LOGPROB = "mean_logprob"
    MEAN_PROB = "mean_prob"


@dataclass(frozen=True)
class DecodeParams:
    """Knobs for one decoding run.

    ``max_len`` bounds the generated tokens including the end marker;
    ``min_len`` is the minimum number of content tokens before the end
    marker may be produced. ``length_penalty_alpha`` divides the raw score
    by ``content_length ** alpha`` at ranking time (0 disables it, the
    default, since raw scores are plain sums). ``seed`` feeds any seeded
    preprocessing (e.g. document selection); the search itself is
    deterministic and ignores it.
    """

    beam_size: int = 4
    max_len: int = 32
    min_len: int = 1
    reduce: Reduce = Reduce.MEAN_LOGPROB
    length_penalty_alpha: float = 0.0
    block_repeat_ngram: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")
        if self.min_len < 0:
            raise ValueError(f"min_len must be >= 0, got {self.min_len}")
        if not self.min_len < self.max_len:
            raise ValueError(
                f"min_len must be smaller than max_len, got {self.min_len} >= {self.max_len}"
            )
        if self.length_penalty_alpha < 0:
            raise ValueError(
                f"length_penalty_alpha must be >= 0, got {self.length_penalty_alpha}"
            )
        if self.block_repeat_ngram is not None and self.block_repeat_ngram < 1:
            raise ValueError(
                f"block_repeat_ngram must be a positive integer or None, "
                f"got {self.block_repeat_ngram}"
            )
        if not isinstance(self.reduce, Reduce):
            raise ValueError(f"reduce must be a Reduce member, got {self.reduce!r}")


@dataclass
class Hypothesis:
    """A live beam entry: shared prefix plus running scores.

    ``prefix`` starts with BOS. ``ensemble_score`` accumulates the combined
    log-score of each chosen token; ``per_input_scores`` accumulates the
    matching per-input log-scores, one entry per ensemble input.
    """

    prefix: TokenSeq
    ensemble_score: float
    per_input_scores: tuple[float, ...]
    finished: bool = False

    def __post_init__(self) -> None:
        if not self.prefix or self.prefix[0] != BOS_ID:
            raise ValueError("hypothesis prefix must begin with BOS")
        if self.finished != (self.prefix[-1] == EOS_ID):
            raise ValueError("finished must hold exactly when the prefix ends with EOS")

    @property
    def content_length(self) -> int:
        n = len(self.prefix) - 1
        return n - 1 if self.finished else n


@dataclass
class ScoredHypothesis:
    """A finished decode: generated tokens (ending in EOS) and its scores."""

    tokens: TokenSeq
    raw_score: float
    ranked_score: float
    trace: TraceMatrix

    @property
    def content_length(self) -> int:
        return len(self.tokens) - 1


def _stacked(per_input: list[LogProbVector]) -> np.ndarray:
    if not per_input:
        raise ValueError("reduce needs at least one distribution")
    widths = {len(v) for v in per_input}
    if len(widths) != 1:
        raise ValueError(f"distributions disagree on vocabulary size: {sorted(widths)}")
    return np.stack([np.asarray(v, dtype=float) for v in per_input])


def reduce_mean_logprob(per_input: list[LogProbVector]) -> LogProbVector:
    """Elementwise arithmetic mean in log space; not renormalized.

    Masked (-inf) entries propagate. Columns are sorted before summation so
    the result does not depend on input order, and a run of identical
    distributions reduces to that distribution exactly.
    """
    arr = _stacked(per_input)
    if np.array_equal(arr, np.broadcast_to(arr[0], arr.shape)):
        return arr[0].copy()
    arr = np.sort(arr, axis=0)
    return np.sum(arr, axis=0) / arr.shape[0]


def reduce_mean_prob(per_input: list[LogProbVector]) -> LogProbVector:
    """Log of the elementwise arithmetic mean of probabilities.

    Computed with a max shift for stability; normalized whenever the inputs
    are. Order-canonical for the same reason as `reduce_mean_logprob`.
    """
    arr = _stacked(per_input)
    if np.array_equal(arr, np.broadcast_to(arr[0], arr.shape)):
        return arr[0].copy()
    arr = np.sort(arr, axis=0)
    top = arr[-1]
    out = np.full(arr.shape[1], -np.inf)
    live = top > -np.inf
    if np.any(live):
        shifted = np.exp(arr[:, live] - top[live])
        out[live] = top[live] + np.log(np.sum(shifted, axis=0) / arr.shape[0])
    return out


_REDUCERS = {
    Reduce.MEAN_LOGPROB: reduce_mean_logprob,
    Reduce.MEAN_PROB: reduce_mean_prob,
}


def ensemble_step(
    model: SequenceModel,
    inputs: list[TokenSeq],
    prefix: TokenSeq,
    reduce: Reduce = Reduce.MEAN_LOGPROB,
) -> tuple[LogProbVector, list[LogProbVector]]:
    """Score the next token for every input, then combine.

    Returns the combined distribution and the per-input distributions in
    input order. Per-input scoring is independent (models are read-only
    here) and the combination is order-canonical, so results never depend
    on evaluation scheduling.
    """
    if not inputs:
        raise ValueError("ensemble needs at least one input")
    per_input = [model.score_next(x, prefix) for x in inputs]
    return _REDUCERS[reduce](per_input), per_input


def ranked_score(raw: float, content_length: int, alpha: float) -> float:
    """Length-penalized ranking score: raw / content_length**alpha.

    With alpha = 0 this is the raw score. A zero-length hypothesis (the
    bare end marker) uses divisor 1 to stay defined for alpha > 0.
    """
    if alpha == 0.0:
        return raw
    return raw / max(1, content_length) ** alpha


def _banned_next_tokens(prefix: TokenSeq, n: int) -> set[int]:
    """Tokens that would complete an n-gram already present in the prefix."""
    if len(prefix) < n:
        return set()
    tail = prefix[len(prefix) - (n - 1):] if n > 1 else ()
    banned = set()
    for i in range(len(prefix) - n + 1):
        if prefix[i:i + n - 1] == tail:
            banned.add(prefix[i + n - 1])
    return banned


def _allowed_tokens(
    combined: LogProbVector,
    prefix: TokenSeq,
    params: DecodeParams,
) -> np.ndarray:
    """Boolean mask of selectable next tokens for an unfinished prefix.

    BOS is never selectable; EOS is masked until min_len content tokens
    exist; once only one content slot remains, everything except EOS is
    masked; optional n-gram blocking removes repeats. Tokens the model
    scores at -inf are unselectable (their score could never recover).
    """
    content_len = len(prefix) - 1
    allowed = combined > -np.inf
    allowed[BOS_ID] = False
    if content_len < params.min_len:
        allowed[EOS_ID] = False
    if content_len == params.max_len - 1:
        keep_eos = allowed[EOS_ID]
        allowed[:] = False
        allowed[EOS_ID] = keep_eos
    if params.block_repeat_ngram is not None:
        for t in _banned_next_tokens(prefix, params.block_repeat_ngram):
            allowed[t] = False
    return allowed


def _constraint_summary(prefix: TokenSeq, params: DecodeParams) -> str:
    content_len = len(prefix) - 1
    parts = [f"content length {content_len}"]
    if content_len < params.min_len:
        parts.append(f"min_len={params.min_len} masks EOS")
    if content_len == params.max_len - 1:
        parts.append(f"max_len={params.max_len} forces EOS")
    if params.block_repeat_ngram is not None:
        parts.append(f"block_repeat_ngram={params.block_repeat_ngram}")
    return ", ".join(parts)


def _default_labels(count: int) -> tuple[str, ...]:
    return tuple(f"input_{i}" for i in range(count))


def _finalize(
    model: SequenceModel,
    inputs: list[TokenSeq],
    hyp: Hypothesis,
    params: DecodeParams,
    input_labels: tuple[str, ...],
) -> ScoredHypothesis:
    tokens = hyp.prefix[1:]
    _, trace = sequence_score(
        model, inputs, tokens, params.reduce, input_labels=input_labels
    )
    return ScoredHypothesis(
        tokens=tokens,
        raw_score=hyp.ensemble_score,
        ranked_score=ranked_score(
            hyp.ensemble_score, len(tokens) - 1, params.length_penalty_alpha
        ),
        trace=trace,
    )


def beam_search(
    model: SequenceModel,
    inputs: list[TokenSeq],
    params: DecodeParams,
    input_labels: tuple[str, ...] | None = None,
) -> list[ScoredHypothesis]:
    """Ensemble beam search over a shared output prefix.

    Returns up to ``beam_size`` finished hypotheses, best ranked first.
    Finished hypotheses accumulate in a completed pool; the search stops
    once the pool holds ``beam_size`` entries or no live hypothesis
    remains. All tie-breaks (pruning and final ranking) prefer the
    lexicographically smaller token-id sequence, so output is fully
    deterministic.
    """
    if not inputs:
        raise ValueError("ensemble needs at least one input")
    inputs = [tuple(x) for x in inputs]
    if input_labels is None:
        input_labels = _default_labels(len(inputs))
    if len(input_labels) != len(inputs):
        raise ValueError(
            f"got {len(input_labels)} input labels for {len(inputs)} inputs"
        )

    live = [Hypothesis((BOS_ID,), 0.0, (0.0,) * len(inputs))]
    pool: list[Hypothesis] = []

    for _ in range(params.max_len):
        if not live:
            break
        survivors: list[Hypothesis] = []
        finished_now: list[Hypothesis] = []
        for hyp in live:
            combined, per_input = ensemble_step(model, inputs, hyp.prefix, params.reduce)
            allowed = _allowed_tokens(combined, hyp.prefix, params)
            for w in np.flatnonzero(allowed):
                w = int(w)
                cand = Hypothesis(
                    prefix=hyp.prefix + (w,),
                    ensemble_score=hyp.ensemble_score + float(combined[w]),
                    per_input_scores=tuple(
                        s + float(v[w]) for s, v in zip(hyp.per_input_scores, per_input)
                    ),
                    finished=w == EOS_ID,
                )
                (finished_now if cand.finished else survivors).append(cand)
        if not survivors and not finished_now and not pool:
            raise DecodeError(
                "no viable continuation for any hypothesis "
                f"({_constraint_summary(live[0].prefix, params)})"
            )
        pool.extend(finished_now)
        if len(pool) >= params.beam_size:
            break
        survivors.sort(key=lambda h: (-h.ensemble_score, h.prefix))
        live = survivors[: params.beam_size]

    if not pool:
        raise DecodeError(
            f"no hypothesis finished within max_len={params.max_len}"
        )
    pool.sort(
        key=lambda h: (
            -ranked_score(h.ensemble_score, h.content_length, params.length_penalty_alpha),
            h.prefix,
        )
    )
    return [
        _finalize(model, inputs, hyp, params, input_labels)
        for hyp in pool[: params.beam_size]
    ]


MAX_BRUTE_FORCE_VOCAB = 8
MAX_BRUTE_FORCE_LEN = 8


def brute_force_search(
    model: SequenceModel,
    inputs: list[TokenSeq],
    params: DecodeParams,
    input_labels: tuple[str, ...] | None = None,
) -> ScoredHypothesis:
    """Exact search oracle: enumerate every admissible finished sequence.

    Walks the full tree of content-token prefixes under the same masking
    rules as the beam, scores every EOS-terminated leaf, and returns the
    best ranked one (ties to the lexicographically smallest token
    sequence). Guarded to desk scale.
    """
    if not inputs:
        raise ValueError("ensemble needs at least one input")
    if len(model.vocab) > MAX_BRUTE_FORCE_VOCAB or params.max_len > MAX_BRUTE_FORCE_LEN:
        raise ValueError(
            "brute-force search is limited to vocabularies of at most "
            f"{MAX_BRUTE_FORCE_VOCAB} tokens and max_len <= {MAX_BRUTE_FORCE_LEN}"
        )
    inputs = [tuple(x) for x in inputs]
    if input_labels is None:
        input_labels = _default_labels(len(inputs))

    best: Hypothesis | None = None
    best_key: tuple[float, TokenSeq] | None = None

    def walk(prefix: TokenSeq, score: float, per_input: tuple[float, ...]) -> None:
        nonlocal best, best_key
        combined, vectors = ensemble_step(model, inputs, prefix, params.reduce)
        allowed = _allowed_tokens(combined, prefix, params)
        for w in np.flatnonzero(allowed):
            w = int(w)
            new_score = score + float(combined[w])
            new_per_input = tuple(
                s + float(v[w]) for s, v in zip(per_input, vectors)
            )
            if w == EOS_ID:
                tokens = prefix[1:] + (w,)
                key = (
                    -ranked_score(new_score, len(tokens) - 1, params.length_penalty_alpha),
                    tokens,
                )
                if best_key is None or key < best_key:
                    best_key = key
                    best = Hypothesis(prefix + (w,), new_score, new_per_input, finished=True)
            else:
                walk(prefix + (w,), new_score, new_per_input)

    walk((BOS_ID,), 0.0, (0.0,) * len(inputs))
    if best is None:
        raise DecodeError(
            "no admissible finished sequence exists under the given constraints"
        )
    return _finalize(model, inputs, best, params, input_labels)


def sequence_score(
    model: SequenceModel,
    inputs: list[TokenSeq],
    tokens: TokenSeq,
    reduce: Reduce = Reduce.MEAN_LOGPROB,
    input_labels: tuple[str, ...] | None = None,
) -> tuple[float, TraceMatrix]:
    """Score an EOS-terminated sequence and record its provenance trace.

    The raw score is the sum over timesteps of the combined log-score of
    each token; the trace keeps the matching per-input log-scores. No
    length masks apply here: any well-formed sequence can be scored, and
    rescoring a beam search result reproduces its raw score.
    """
    if not inputs:
        raise ValueError("ensemble needs at least one input")
    inputs = [tuple(x) for x in inputs]
    tokens = tuple(tokens)
    vocab = model.vocab
    check_token_seq(tokens, vocab, "tokens")
    if tokens[-1] != EOS_ID:
        raise ValueError("sequence must end with the EOS id")
    for pos, t in enumerate(tokens[:-1]):
        if t == EOS_ID:
            raise ValueError(f"EOS appears mid-sequence at position {pos}")
        if t == BOS_ID:
            raise ValueError(f"BOS appears inside the sequence at position {pos}")
    if input_labels is None:
        input_labels = _default_labels(len(inputs))

    trace = TraceMatrix(input_labels=tuple(input_labels))
    raw = 0.0
    prefix: TokenSeq = (BOS_ID,)
    for t in tokens:
        combined, per_input = ensemble_step(model, inputs, prefix, reduce)
        raw += float(combined[t])
        trace.record_step(
            token_id=t,
            token=vocab.token(t),
            combined=float(combined[t]),
            per_input=[float(v[t]) for v in per_input],
        )
        prefix = prefix + (t,)
    return raw, trace
