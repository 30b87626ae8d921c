"""Command-line front end for reproducible ensemble-decoding runs.

Commands:

* ``decode``   - decode every cluster in a file, writing one summary record
                 per cluster plus a per-cluster provenance trace.
* ``evaluate`` - score a decode's hypotheses against cluster references.
* ``sweep``    - decode + evaluate across several ensemble sizes.
* ``trace``    - decode a single cluster and emit its contribution matrix.

Every command accepts ``--config FILE`` (JSON object of flag names);
explicit flags override file values. Given the same config and seed, all
output artifacts are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .data import Cluster, ClusterSet, load_clusters, select_document_indices, tokenize_and_truncate
from .decoder import DecodeParams, Reduce, beam_search
from .errors import FormatError
from .rouge import DEFAULT_METRICS, MultiRefStrategy, RougeConfig, compute_metric
from .seqmodel import MODEL_KINDS, SequenceModel, load_model


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True)


_UNSAFE_ID = re.compile(r"[^0-9A-Za-z_.-]+")


def _trace_filename(index: int, cluster_id: str, fmt: str) -> str:
    safe = _UNSAFE_ID.sub("_", cluster_id)[:40] or "cluster"
    return f"{index:04d}_{safe}.{fmt}"


@dataclass
class RunConfig:
    """Everything one decode run depends on. Serialized next to outputs
    (minus output locations, which do not affect the artifacts' bytes)."""

    model: str
    model_kind: str
    clusters: str
    decode: DecodeParams
    max_docs: int
    max_input_tokens: int
    trace_format: str

    def record(self) -> dict:
        return {
            "model": self.model,
            "model_kind": self.model_kind,
            "clusters": self.clusters,
            "beam_size": self.decode.beam_size,
            "max_len": self.decode.max_len,
            "min_len": self.decode.min_len,
            "reduce": self.decode.reduce.value,
            "length_penalty": self.decode.length_penalty_alpha,
            "block_repeat_ngram": self.decode.block_repeat_ngram,
            "seed": self.decode.seed,
            "max_docs": self.max_docs,
            "max_input_tokens": self.max_input_tokens,
            "trace_format": self.trace_format,
        }


def _decode_params(args) -> DecodeParams:
    return DecodeParams(
        beam_size=args.beam_size,
        max_len=args.max_len,
        min_len=args.min_len,
        reduce=Reduce(args.reduce),
        length_penalty_alpha=args.length_penalty,
        block_repeat_ngram=args.block_repeat_ngram,
        seed=args.seed,
    )


def _run_config(args) -> RunConfig:
    return RunConfig(
        model=args.model,
        model_kind=args.model_kind,
        clusters=args.clusters,
        decode=_decode_params(args),
        max_docs=args.max_docs,
        max_input_tokens=args.max_input_tokens,
        trace_format=args.trace_format,
    )


def _rouge_config(args) -> RougeConfig:
    return RougeConfig(
        lowercase=args.rouge_lowercase,
        strip_punctuation=args.rouge_strip_punctuation,
        use_porter_stemming=args.rouge_stemming,
        multi_ref_strategy=MultiRefStrategy(args.multi_ref),
        beta=args.beta,
    )


def _decode_cluster(model: SequenceModel, cluster: Cluster, cfg: RunConfig):
    """Decode one cluster; returns (summary record, provenance trace)."""
    vocab = model.vocab
    indices = select_document_indices(cluster, cfg.max_docs, cfg.decode.seed)
    inputs = []
    for i in indices:
        ids = tokenize_and_truncate(cluster.documents[i], vocab, cfg.max_input_tokens)
        if not ids:
            raise ValueError(f"document {i} tokenizes to nothing")
        inputs.append(ids)
    labels = tuple(f"doc{i}" for i in indices)
    best = beam_search(model, inputs, cfg.decode, input_labels=labels)[0]
    content = [vocab.token(t) for t in best.tokens[:-1]]
    record = {
        "id": cluster.id,
        "tokens": content,
        "text": " ".join(content),
        "raw_score": best.raw_score,
        "ranked_score": best.ranked_score,
        "num_inputs": len(inputs),
    }
    return record, best.trace


def _decode_run(
    model: SequenceModel,
    clusters: ClusterSet,
    cfg: RunConfig,
    out_dir: Path,
    workers: int,
) -> list[tuple[str, str]]:
    """Decode all clusters into ``out_dir``; returns (id, error) failures.

    Clusters may be processed in parallel; records and trace files always
    follow input order, so outputs are identical for any worker count.
    """

    def job(item: tuple[int, Cluster]):
        index, cluster = item
        try:
            record, trace = _decode_cluster(model, cluster, cfg)
        except Exception as exc:  # noqa: BLE001 - isolate per-cluster failures
            return index, None, None, f"{type(exc).__name__}: {exc}"
        return index, record, trace.export(cfg.trace_format), None

    items = list(enumerate(clusters))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(item) for item in items]

    failures: list[tuple[str, str]] = []
    lines: list[str] = []
    for (index, cluster), (_, record, trace_text, error) in zip(items, results):
        if error is not None:
            failures.append((cluster.id, error))
            continue
        lines.append(_json_line(record))
        _atomic_write(
            out_dir / "traces" / _trace_filename(index, cluster.id, cfg.trace_format),
            trace_text,
        )
    _atomic_write(out_dir / "summaries.jsonl", "".join(f"{ln}\n" for ln in lines))
    _atomic_write(
        out_dir / "run_config.json",
        json.dumps(cfg.record(), sort_keys=True, indent=2) + "\n",
    )
    return failures


def _report_failures(failures: list[tuple[str, str]]) -> None:
    for cid, err in failures:
        print(f"cluster {cid}: {err}", file=sys.stderr)
    if failures:
        print(f"{len(failures)} cluster(s) failed", file=sys.stderr)


def cmd_decode(args) -> int:
    cfg = _run_config(args)
    model = load_model(cfg.model, cfg.model_kind)
    clusters = load_clusters(cfg.clusters)
    failures = _decode_run(model, clusters, cfg, Path(args.out), args.workers)
    done = len(clusters) - len(failures)
    print(f"decoded {done}/{len(clusters)} clusters -> {args.out}")
    _report_failures(failures)
    return 1 if failures else 0


def _load_hypotheses(path: Path) -> list[dict]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read hypotheses file {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(rec, dict) or "id" not in rec or "text" not in rec:
            raise FormatError(f"{path}: line {lineno}: record needs 'id' and 'text' fields")
        records.append(rec)
    return records


def _evaluate_records(
    records: list[dict],
    clusters: ClusterSet,
    cfg: RougeConfig,
    metrics: tuple[str, ...],
) -> dict:
    missing = [r["id"] for r in records if clusters.get(r["id"]) is None]
    if missing:
        raise ValueError(f"hypothesis ids not present in cluster file: {', '.join(missing)}")
    unreferenced = [r["id"] for r in records if not clusters.get(r["id"]).references]
    if unreferenced:
        raise ValueError(
            f"clusters without references cannot be evaluated: {', '.join(unreferenced)}"
        )
    per_cluster = []
    for rec in records:
        refs = list(clusters.get(rec["id"]).references)
        row: dict = {"id": rec["id"]}
        for metric in metrics:
            s = compute_metric(metric, rec["text"], refs, cfg)
            row[metric] = {"precision": s.precision, "recall": s.recall, "f": s.f}
        per_cluster.append(row)
    means = {}
    for metric in metrics:
        means[metric] = {
            comp: math.fsum(row[metric][comp] for row in per_cluster) / len(per_cluster)
            for comp in ("precision", "recall", "f")
        }
    return {"mean": means, "per_cluster": per_cluster}


def _print_metric_table(means: dict) -> None:
    print(f"{'metric':<10} {'precision':>10} {'recall':>10} {'f':>10}")
    for metric, comps in means.items():
        print(
            f"{metric:<10} {comps['precision']:>10.6f} "
            f"{comps['recall']:>10.6f} {comps['f']:>10.6f}"
        )


def cmd_evaluate(args) -> int:
    records = _load_hypotheses(Path(args.hypotheses))
    if not records:
        print("hypotheses file holds no records", file=sys.stderr)
        return 1
    clusters = load_clusters(args.clusters)
    report = _evaluate_records(records, clusters, _rouge_config(args), tuple(args.metrics))
    _print_metric_table(report["mean"])
    if args.report:
        _atomic_write(Path(args.report), json.dumps(report, sort_keys=True, indent=2) + "\n")
        print(f"report -> {args.report}")
    return 0


def cmd_sweep(args) -> int:
    sizes = args.sizes
    if any(s < 1 for s in sizes):
        raise ValueError(f"ensemble sizes must be >= 1, got {sizes}")
    cfg = _run_config(args)
    model = load_model(cfg.model, cfg.model_kind)
    clusters = load_clusters(cfg.clusters)
    rouge_cfg = _rouge_config(args)
    metrics = tuple(args.metrics)
    out_dir = Path(args.out)

    all_failures: list[tuple[str, str]] = []
    rows = []
    for size in sizes:
        size_cfg = RunConfig(
            model=cfg.model,
            model_kind=cfg.model_kind,
            clusters=cfg.clusters,
            decode=cfg.decode,
            max_docs=size,
            max_input_tokens=cfg.max_input_tokens,
            trace_format=cfg.trace_format,
        )
        size_dir = out_dir / f"size_{size}"
        failures = _decode_run(model, clusters, size_cfg, size_dir, args.workers)
        all_failures.extend(failures)
        records = _load_hypotheses(size_dir / "summaries.jsonl")
        report = _evaluate_records(records, clusters, rouge_cfg, metrics)
        _atomic_write(
            size_dir / "report.json", json.dumps(report, sort_keys=True, indent=2) + "\n"
        )
        rows.append((size, report["mean"]))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["size"]
    for metric in metrics:
        header += [f"{metric}_{comp}" for comp in ("precision", "recall", "f")]
    writer.writerow(header)
    for size, means in rows:
        row = [size]
        for metric in metrics:
            row += [f"{means[metric][comp]:.17g}" for comp in ("precision", "recall", "f")]
        writer.writerow(row)
    _atomic_write(out_dir / "sweep.csv", buf.getvalue())
    record = _run_config(args).record()
    record["sizes"] = list(sizes)
    _atomic_write(out_dir / "run_config.json", json.dumps(record, sort_keys=True, indent=2) + "\n")

    print(f"{'size':<6}" + "".join(f"{m + ' f':>14}" for m in metrics))
    for size, means in rows:
        print(f"{size:<6}" + "".join(f"{means[m]['f']:>14.6f}" for m in metrics))
    print(f"sweep table -> {out_dir / 'sweep.csv'}")
    _report_failures(all_failures)
    return 1 if all_failures else 0


def cmd_trace(args) -> int:
    cfg = _run_config(args)
    model = load_model(cfg.model, cfg.model_kind)
    clusters = load_clusters(cfg.clusters)
    cluster = clusters.get(args.cluster_id)
    if cluster is None:
        print(f"no cluster with id {args.cluster_id!r}", file=sys.stderr)
        return 1
    record, trace = _decode_cluster(model, cluster, cfg)
    text = trace.export(cfg.trace_format)
    if args.output:
        _atomic_write(Path(args.output), text)
        print(f"trace -> {args.output}")
    else:
        sys.stdout.write(text)
    print(f"decoded: {record['text']}")
    print(f"raw score: {record['raw_score']:.6f}")
    for label, total in zip(trace.input_labels, trace.input_totals()):
        print(f"  {label}: {total:.6f}")
    return 0


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    # "required" flags stay optional at parse time so a --config file can
    # supply them; _require_flags enforces presence after merging.
    p.add_argument("--model", default=None, help="path to the model spec file")
    p.add_argument(
        "--model-kind", default="toy", choices=MODEL_KINDS, help="model file format"
    )


def _add_decode_flags(p: argparse.ArgumentParser) -> None:
    d = DecodeParams()
    p.add_argument("--beam-size", type=int, default=d.beam_size, help="beam width")
    p.add_argument("--max-len", type=int, default=d.max_len,
                   help="max generated tokens, end marker included")
    p.add_argument("--min-len", type=int, default=d.min_len,
                   help="min content tokens before the end marker is allowed")
    p.add_argument("--reduce", default=d.reduce.value,
                   choices=[r.value for r in Reduce],
                   help="per-step combination of per-input distributions")
    p.add_argument("--length-penalty", type=float, default=d.length_penalty_alpha,
                   help="rank by raw_score / content_length**alpha")
    p.add_argument("--block-repeat-ngram", type=int, default=None,
                   help="forbid repeating any n-gram of this size")
    p.add_argument("--seed", type=int, default=0, help="seed for document selection")
    p.add_argument("--max-docs", type=int, default=5,
                   help="documents sampled per cluster")
    p.add_argument("--max-input-tokens", type=int, default=512,
                   help="tokens kept per input document")
    p.add_argument("--trace-format", default="csv", choices=["csv", "json"],
                   help="provenance trace file format")
    p.add_argument("--workers", type=int, default=1,
                   help="clusters decoded in parallel")


def _add_rouge_flags(p: argparse.ArgumentParser) -> None:
    d = RougeConfig()
    p.add_argument("--rouge-lowercase", action=argparse.BooleanOptionalAction,
                   default=d.lowercase, help="case-fold before matching")
    p.add_argument("--rouge-strip-punctuation", action=argparse.BooleanOptionalAction,
                   default=d.strip_punctuation, help="drop non-alphanumeric characters")
    p.add_argument("--rouge-stemming", action=argparse.BooleanOptionalAction,
                   default=d.use_porter_stemming, help="Porter-stem tokens")
    p.add_argument("--multi-ref", default=d.multi_ref_strategy.value,
                   choices=[s.value for s in MultiRefStrategy],
                   help="combine scores over multiple references")
    p.add_argument("--beta", type=float, default=d.beta, help="F-measure weight")
    p.add_argument("--metrics", nargs="+", default=list(DEFAULT_METRICS),
                   help="rouge-<n> and/or rouge-l")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="dyne",
        description="Ensemble beam-search decoding over clusters of related inputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("decode", help="decode every cluster in a file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_model_flags(p)
    p.add_argument("--clusters", default=None, help="JSONL cluster file")
    _add_decode_flags(p)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_decode)
    subparsers["decode"] = p

    p = sub.add_parser("evaluate", help="score hypotheses against references",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--hypotheses", default=None, help="summaries.jsonl from decode")
    p.add_argument("--clusters", default=None, help="JSONL cluster file")
    _add_rouge_flags(p)
    p.add_argument("--report", default=None, help="write a JSON report here")
    p.set_defaults(func=cmd_evaluate)
    subparsers["evaluate"] = p

    p = sub.add_parser("sweep", help="decode + evaluate across ensemble sizes",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_model_flags(p)
    p.add_argument("--clusters", default=None, help="JSONL cluster file")
    _add_decode_flags(p)
    _add_rouge_flags(p)
    p.add_argument("--sizes", type=int, nargs="+", default=None,
                   help="ensemble sizes to decode with")
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_sweep)
    subparsers["sweep"] = p

    p = sub.add_parser("trace", help="decode one cluster and emit its trace matrix",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_model_flags(p)
    p.add_argument("--clusters", default=None, help="JSONL cluster file")
    p.add_argument("--cluster-id", default=None, help="cluster to trace")
    _add_decode_flags(p)
    p.add_argument("--output", default=None, help="trace file (stdout when omitted)")
    p.set_defaults(func=cmd_trace)
    subparsers["trace"] = p

    for sp in subparsers.values():
        sp.add_argument("--config", default=None,
                        help="JSON file of flag defaults; explicit flags win")
    return parser, subparsers


def _apply_config_file(args: argparse.Namespace, subparsers, argv: list[str]):
    """Re-parse the command with defaults taken from the config file.

    Config keys are flag dest names (``beam_size``, ``max_docs``, ...);
    flags present on the command line keep precedence.
    """
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read config file {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config file {args.config} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"config file {args.config} must hold a JSON object")
    sp = subparsers[args.command]
    known = {a.dest for a in sp._actions} - {"help", "config"}
    unknown = doc.keys() - known
    if unknown:
        raise FormatError(
            f"config file {args.config} has unknown key(s): {', '.join(sorted(unknown))}"
        )
    sp.set_defaults(**doc)
    sub_argv = list(argv)
    sub_argv.remove(args.command)
    merged = sp.parse_args(sub_argv)
    merged.command = args.command
    return merged


_REQUIRED_FLAGS = {
    "decode": ("model", "clusters", "out"),
    "evaluate": ("hypotheses", "clusters"),
    "sweep": ("model", "clusters", "sizes", "out"),
    "trace": ("model", "clusters", "cluster_id"),
}


def _require_flags(args: argparse.Namespace) -> None:
    missing = [
        "--" + name.replace("_", "-")
        for name in _REQUIRED_FLAGS[args.command]
        if getattr(args, name) is None
    ]
    if missing:
        raise ValueError(
            f"missing required argument(s) for {args.command}: {', '.join(missing)} "
            f"(set them as flags or in --config)"
        )


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            args = _apply_config_file(args, subparsers, argv)
        _require_flags(args)
        return args.func(args)
    except (FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
