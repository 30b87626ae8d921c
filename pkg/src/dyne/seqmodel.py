"""Conditional sequence models over a fixed vocabulary.

The decoder asks a model exactly one question: given one input sequence and
the shared output prefix, what is the log-probability of every possible next
token? Models here are small closed-form constructions whose distributions
can be checked by hand, which makes every decoder property exactly testable.

Two model kinds are provided:

* ``UniformModel`` assigns every vocabulary entry the same probability,
  regardless of input or prefix.
* ``CopyBigramModel`` mixes an add-k smoothed copy distribution over the
  input's tokens with an add-k smoothed bigram distribution conditioned on
  the last prefix token.

Both are deterministic and safe for concurrent read-only scoring.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import FormatError

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2

BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"

RESERVED_TOKENS = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)

#: A token sequence is a tuple of vocabulary ids.
TokenSeq = tuple[int, ...]

#: A next-token distribution in log space, one entry per vocabulary id.
#: Entries may be ``-inf`` (masked) but never NaN; model outputs satisfy
#: ``|logsumexp(v)| <= 1e-6``.
LogProbVector = np.ndarray


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory with reserved begin/end/unknown markers.

    Ids are contiguous positions in ``tokens``; the first three entries are
    always the reserved markers, so content tokens start at id 3.
    """

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) < 4:
            raise ValueError(
                f"vocab needs the 3 reserved tokens plus at least one content "
                f"token, got {len(self.tokens)} entries"
            )
        if self.tokens[:3] != RESERVED_TOKENS:
            raise ValueError(
                f"vocab must start with the reserved tokens {RESERVED_TOKENS}, "
                f"got {self.tokens[:3]}"
            )
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            seen: set[str] = set()
            dup = next(t for t in self.tokens if t in seen or seen.add(t))
            raise ValueError(f"duplicate vocab token {dup!r}")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_content(cls, content: Iterable[str]) -> "Vocab":
        """Build a vocab from content tokens, prepending the reserved markers."""
        return cls(RESERVED_TOKENS + tuple(content))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        """Exact lookup; raises KeyError for unknown tokens."""
        return self._index[token]

    def encode_token(self, token: str) -> int:
        """Lookup with out-of-vocabulary tokens mapped to the unknown id."""
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise ValueError(f"token id {idx} out of range for vocab of size {len(self)}")
        return self.tokens[idx]

    @property
    def content_ids(self) -> tuple[int, ...]:
        """Ids of the non-reserved tokens."""
        return tuple(range(3, len(self.tokens)))


def check_token_seq(
    ids: TokenSeq,
    vocab: Vocab,
    name: str = "sequence",
    *,
    require_bos: bool = False,
    non_empty: bool = True,
) -> None:
    """Validate ids against a vocab; raises ValueError with context."""
    if non_empty and not ids:
        raise ValueError(f"{name} must not be empty")
    for pos, t in enumerate(ids):
        if not 0 <= t < len(vocab):
            raise ValueError(
                f"{name}[{pos}] = {t} out of vocabulary range [0, {len(vocab)})"
            )
    if require_bos and (not ids or ids[0] != BOS_ID):
        raise ValueError(f"{name} must begin with the BOS id {BOS_ID}")


class SequenceModel(Protocol):
    """Anything that can score the next token for one input and a shared prefix."""

    @property
    def vocab(self) -> Vocab: ...

    def score_next(self, input_ids: TokenSeq, prefix: TokenSeq) -> LogProbVector: ...


@dataclass
class ToyModelSpec:
    """Parameters of the copy/bigram mixture model.

    ``copy_weight`` interpolates between copying tokens from the input
    (weight 1) and a bigram continuation of the prefix (weight 0). Both
    component distributions are add-``smooth_k`` smoothed over the
    predictable alphabet: every content token plus the end marker. The
    begin and unknown markers are never predicted and carry probability
    zero (they are excluded from the alphabet rather than renormalized).
    """

    copy_weight: float
    smooth_k: float
    bigram_counts: dict[tuple[int, int], int]
    vocab: Vocab

    def __post_init__(self) -> None:
        if not 0.0 <= self.copy_weight <= 1.0:
            raise ValueError(f"copy weight must lie in [0, 1], got {self.copy_weight}")
        if not self.smooth_k > 0:
            raise ValueError(f"smooth_k must be positive, got {self.smooth_k}")
        for (prev, nxt), count in self.bigram_counts.items():
            for t in (prev, nxt):
                if not 0 <= t < len(self.vocab):
                    raise ValueError(f"bigram count id {t} out of vocabulary range")
            if nxt in (BOS_ID, UNK_ID):
                raise ValueError(
                    f"bigram count targets unpredictable token "
                    f"{self.vocab.token(nxt)!r} as successor"
                )
            if not isinstance(count, int) or count < 0:
                raise ValueError(f"bigram count for {(prev, nxt)} must be a nonnegative integer")

    def to_json_text(self) -> str:
        """Canonical serialization: sorted fields, sorted count triples."""
        triples = sorted(
            [self.vocab.token(p), self.vocab.token(n), c]
            for (p, n), c in self.bigram_counts.items()
        )
        doc = {
            "lambda": self.copy_weight,
            "smooth_k": self.smooth_k,
            "vocab": list(self.vocab.tokens),
            "bigram_counts": triples,
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json_text(cls, text: str) -> "ToyModelSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"model spec is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise FormatError("model spec must be a JSON object")
        required = {"lambda", "smooth_k", "vocab", "bigram_counts"}
        missing = required - doc.keys()
        if missing:
            raise FormatError(f"model spec missing field(s): {', '.join(sorted(missing))}")
        unknown = doc.keys() - required
        if unknown:
            raise FormatError(f"model spec has unknown field(s): {', '.join(sorted(unknown))}")
        if not isinstance(doc["vocab"], list) or not all(
            isinstance(t, str) for t in doc["vocab"]
        ):
            raise FormatError("field 'vocab' must be a list of strings")
        vocab = Vocab(tuple(doc["vocab"]))
        for f in ("lambda", "smooth_k"):
            if not isinstance(doc[f], (int, float)) or isinstance(doc[f], bool):
                raise FormatError(f"field {f!r} must be a number")
        counts: dict[tuple[int, int], int] = {}
        if not isinstance(doc["bigram_counts"], list):
            raise FormatError("field 'bigram_counts' must be a list of [prev, next, count] triples")
        for i, triple in enumerate(doc["bigram_counts"]):
            if (
                not isinstance(triple, list)
                or len(triple) != 3
                or not isinstance(triple[0], str)
                or not isinstance(triple[1], str)
                or not isinstance(triple[2], int)
                or isinstance(triple[2], bool)
            ):
                raise FormatError(
                    f"bigram_counts[{i}] must be a [prev_token, next_token, count] triple"
                )
            prev_tok, next_tok, count = triple
            for tok in (prev_tok, next_tok):
                if tok not in vocab:
                    raise FormatError(f"bigram_counts[{i}] names unknown token {tok!r}")
            key = (vocab.id_of(prev_tok), vocab.id_of(next_tok))
            if key in counts:
                raise FormatError(f"bigram_counts[{i}] repeats pair {prev_tok!r}->{next_tok!r}")
            counts[key] = count
        return cls(
            copy_weight=float(doc["lambda"]),
            smooth_k=float(doc["smooth_k"]),
            bigram_counts=counts,
            vocab=vocab,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ToyModelSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read model spec {path}: {exc}") from exc
        try:
            return cls.from_json_text(text)
        except ValueError as exc:
            raise type(exc)(f"{path}: {exc}") from exc


def _validate_scoring_args(vocab: Vocab, input_ids: TokenSeq, prefix: TokenSeq) -> None:
    check_token_seq(tuple(input_ids), vocab, "input")
    check_token_seq(tuple(prefix), vocab, "prefix", require_bos=True)


class UniformModel:
    """Assigns probability 1/|vocab| to every token, everywhere."""

    def __init__(self, vocab: Vocab):
        self._vocab = vocab
        self._dist = np.full(len(vocab), -math.log(len(vocab)))

    @property
    def vocab(self) -> Vocab:
        return self._vocab

    def score_next(self, input_ids: TokenSeq, prefix: TokenSeq) -> LogProbVector:
        _validate_scoring_args(self._vocab, input_ids, prefix)
        return self._dist.copy()


class CopyBigramModel:
    """Mixture of an input-copy distribution and a prefix-bigram distribution.

    For a next token w over the predictable alphabet A (content tokens plus
    the end marker):

        p(w | x, prefix) = cw * copy(w | x) + (1 - cw) * bigram(w | prefix[-1])
        copy(w | x)      = (count(w in x, over A) + k) / (|x over A| + k * |A|)
        bigram(w | prev) = (C[prev, w] + k) / (sum_w' C[prev, w'] + k * |A|)

    Input tokens outside A (the unknown marker) do not contribute to the
    copy counts, keeping the distribution normalized. Distributions for a
    given input or previous token are cached; caches are idempotent, so
    concurrent scoring stays deterministic.
    """

    def __init__(self, spec: ToyModelSpec):
        self._spec = spec
        self._vocab = spec.vocab
        alphabet = (EOS_ID,) + spec.vocab.content_ids
        self._alphabet = np.array(alphabet, dtype=np.intp)
        self._alphabet_set = frozenset(alphabet)
        self._copy_cache: dict[TokenSeq, np.ndarray] = {}
        self._bigram_cache: dict[int, np.ndarray] = {}

    @property
    def vocab(self) -> Vocab:
        return self._vocab

    @property
    def spec(self) -> ToyModelSpec:
        return self._spec

    def _copy_probs(self, input_ids: TokenSeq) -> np.ndarray:
        cached = self._copy_cache.get(input_ids)
        if cached is not None:
            return cached
        k = self._spec.smooth_k
        occurrences = Counter(t for t in input_ids if t in self._alphabet_set)
        counts = np.array([occurrences.get(int(t), 0) for t in self._alphabet], dtype=float)
        denom = counts.sum() + k * len(self._alphabet)
        probs = (counts + k) / denom
        self._copy_cache[input_ids] = probs
        return probs

    def _bigram_probs(self, prev: int) -> np.ndarray:
        cached = self._bigram_cache.get(prev)
        if cached is not None:
            return cached
        k = self._spec.smooth_k
        counts = np.array(
            [self._spec.bigram_counts.get((prev, int(t)), 0) for t in self._alphabet],
            dtype=float,
        )
        denom = counts.sum() + k * len(self._alphabet)
        probs = (counts + k) / denom
        self._bigram_cache[prev] = probs
        return probs

    def score_next(self, input_ids: TokenSeq, prefix: TokenSeq) -> LogProbVector:
        input_ids = tuple(input_ids)
        prefix = tuple(prefix)
        _validate_scoring_args(self._vocab, input_ids, prefix)
        cw = self._spec.copy_weight
        probs_a = cw * self._copy_probs(input_ids) + (1.0 - cw) * self._bigram_probs(prefix[-1])
        full = np.zeros(len(self._vocab))
        full[self._alphabet] = probs_a
        with np.errstate(divide="ignore"):
            return np.log(full)


def make_toy_model(spec: ToyModelSpec) -> CopyBigramModel:
    """Build the copy/bigram mixture model from a validated spec."""
    return CopyBigramModel(spec)


MODEL_KINDS = ("toy",)


def load_model(path: str | Path, kind: str = "toy") -> CopyBigramModel:
    """Load a model from a spec file. ``kind`` selects the file format."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; known kinds: {', '.join(MODEL_KINDS)}")
    return make_toy_model(ToyModelSpec.load(path))
