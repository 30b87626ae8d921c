"""Per-input contribution tracing for ensemble decodes.

Because the combined score of each generated token is composed from
per-input scores that depend only on (model, that input, shared prefix),
the contribution of every input at every timestep is exact: it can be
reproduced by an independent single-input scoring call. The trace matrix
records those per-input log-scores, one row per timestep and one column
per input; column sums give the log-likelihood of the whole output under
each input alone.

Exports carry log-scores. The CSV layout is
``timestep,token,combined,<label_1>,...,<label_n>``; JSON mirrors those
fields and additionally carries token ids. Floats are written with enough
digits to round-trip exactly (non-finite values appear as ``-inf`` in CSV
and ``-Infinity`` in JSON).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from .errors import FormatError


def _format_float(x: float) -> str:
    if x == -math.inf:
        return "-inf"
    return f"{x:.17g}"


@dataclass(frozen=True)
class TraceRow:
    """One decoding timestep: the chosen token and its log-scores."""

    token_id: int
    token: str
    combined: float
    per_input: tuple[float, ...]


@dataclass
class TraceMatrix:
    """Timesteps x inputs matrix of per-input chosen-token log-scores."""

    input_labels: tuple[str, ...]
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def record_step(
        self,
        token_id: int,
        token: str,
        combined: float,
        per_input: list[float] | tuple[float, ...],
    ) -> "TraceMatrix":
        """Append one timestep; earlier rows are never touched."""
        per_input = tuple(float(x) for x in per_input)
        if len(per_input) != len(self.input_labels):
            raise ValueError(
                f"row has {len(per_input)} per-input scores but the trace "
                f"has {len(self.input_labels)} inputs"
            )
        self.rows.append(
            TraceRow(
                token_id=int(token_id),
                token=token,
                combined=float(combined),
                per_input=per_input,
            )
        )
        return self

    def input_totals(self) -> list[float]:
        """Column sums: the full sequence's log-likelihood under each input."""
        if not self.rows:
            raise ValueError("trace is empty")
        return [
            sum(row.per_input[i] for row in self.rows)
            for i in range(len(self.input_labels))
        ]

    def combined_total(self) -> float:
        """Sum of the combined column; equals the decode's raw score."""
        if not self.rows:
            raise ValueError("trace is empty")
        return sum(row.combined for row in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["timestep", "token", "combined", *self.input_labels])
        for t, row in enumerate(self.rows):
            writer.writerow(
                [
                    t,
                    row.token,
                    _format_float(row.combined),
                    *(_format_float(x) for x in row.per_input),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "input_labels": list(self.input_labels),
            "rows": [
                {
                    "timestep": t,
                    "token_id": row.token_id,
                    "token": row.token,
                    "combined": row.combined,
                    "scores": list(row.per_input),
                }
                for t, row in enumerate(self.rows)
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def export(self, fmt: str) -> str:
        """Serialize to ``"csv"`` or ``"json"``."""
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown trace format {fmt!r}; use 'csv' or 'json'")

    @classmethod
    def from_csv(cls, text: str, vocab=None) -> "TraceMatrix":
        """Parse a CSV export. Token ids are recovered through ``vocab``
        when given (the CSV itself carries only token strings); without a
        vocab they are set to -1."""
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("trace CSV is empty") from None
        if header[:3] != ["timestep", "token", "combined"]:
            raise FormatError(
                f"trace CSV header must start with timestep,token,combined; got {header[:3]}"
            )
        labels = tuple(header[3:])
        trace = cls(input_labels=labels)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3 + len(labels):
                raise FormatError(
                    f"trace CSV line {lineno}: expected {3 + len(labels)} fields, got {len(row)}"
                )
            token = row[1]
            try:
                combined = float(row[2])
                per_input = tuple(float(x) for x in row[3:])
            except ValueError as exc:
                raise FormatError(f"trace CSV line {lineno}: {exc}") from exc
            token_id = vocab.id_of(token) if vocab is not None else -1
            trace.record_step(token_id, token, combined, per_input)
        return trace

    @classmethod
    def from_json(cls, text: str) -> "TraceMatrix":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"trace JSON is invalid: {exc}") from exc
        try:
            trace = cls(input_labels=tuple(doc["input_labels"]))
            for row in doc["rows"]:
                trace.record_step(
                    row["token_id"], row["token"], row["combined"], row["scores"]
                )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"trace JSON missing field: {exc}") from exc
        return trace
