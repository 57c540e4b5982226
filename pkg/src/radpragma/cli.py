"""Command-line entry point.

Subcommands: label, stats, chi2, shift, clean, clean-eval, index, generate,
evaluate. Configuration values resolve with precedence
command-line flag > environment variable > config file > default,
and every run writes the resolved configuration next to its primary output
(``<out>.run.json``) for reproducibility. All outputs are written
atomically; an interrupted run never leaves a partial file at the final
path.

Exit codes: 0 success, 1 input error, 2 remote-backend failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

from . import backends, cleaning, corpus_io, generator, metrics, stats
from .errors import BackendError, DegenerateTableError, InputError
from .labeler import (Lexicon, default_lexicon, indication_mention_sets,
                      label_corpus)
from .model import CONDITIONS, Condition, Report

ENV_PREFIX = "RADPRAGMA_"


@dataclass
class Config:
    """Resolved runtime configuration, recorded alongside every output."""

    lexicon: Optional[str] = None
    keywords: Optional[str] = None
    clean_endpoint: Optional[str] = None
    generation_endpoint: Optional[str] = None
    auth_token: Optional[str] = None
    timeout: float = 30.0
    retries: int = 2
    in_flight: int = 4
    shift_threshold: float = 0.25
    f1_average: str = "macro"
    jobs: int = 1
    seed: Optional[int] = None


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if "int" in str(kind):
        return int(raw)
    if "float" in str(kind):
        return float(raw)
    return raw


def resolve_config(args: argparse.Namespace) -> Config:
    config = Config()
    path = getattr(args, "config", None)
    if path:
        with open(path, "r", encoding="utf-8") as handle:
            try:
                file_values = json.load(handle)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: invalid config JSON: {exc.msg}") \
                    from None
        for name, value in file_values.items():
            if name not in _FIELD_TYPES:
                raise InputError(f"{path}: unknown config key {name!r}")
            setattr(config, name, value)
    for name in _FIELD_TYPES:
        raw = os.environ.get(ENV_PREFIX + name.upper())
        if raw is not None:
            setattr(config, name, _coerce(name, raw))
    for name in _FIELD_TYPES:
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    return config


def _load_lexicon(config: Config) -> Lexicon:
    if config.lexicon:
        return Lexicon.load(config.lexicon)
    return default_lexicon()


def _load_catalog(config: Config) -> metrics.KeywordCatalog:
    if config.keywords:
        return metrics.KeywordCatalog.load(config.keywords)
    return metrics.default_catalog()


def _write_run_config(primary_out: Optional[str], command: str,
                      config: Config, inputs: dict) -> None:
    if not primary_out:
        return
    record = {"command": command, "config": asdict(config), "inputs": inputs}
    corpus_io.write_text_atomic(
        primary_out + ".run.json",
        json.dumps(record, ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "NA"
    return format(value, ".10g")


def _labels_for(args, corpus, lexicon):
    if getattr(args, "labels", None):
        labels = corpus_io.read_labels_csv(args.labels)
        return labels
    return label_corpus(corpus, lexicon)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_label(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    corpus = corpus_io.read_reports_jsonl(args.infile)
    labels = label_corpus(corpus, lexicon)
    corpus_io.write_labels_csv(labels, args.out)
    _write_run_config(args.out, "label", config, {"in": args.infile})
    return 0


def _summary_csv(summary: stats.CorpusSummary) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric", "value"])
    writer.writerow(["report_count", summary.report_count])
    writer.writerow(["pct_no_finding", _fmt(summary.pct_no_finding)])
    writer.writerow(["avg_positive_mentions",
                     _fmt(summary.avg_positive_mentions)])
    writer.writerow(["avg_positive_mentions_non_no_finding",
                     _fmt(summary.avg_positive_mentions_non_no_finding)])
    writer.writerow(["avg_negative_mentions",
                     _fmt(summary.avg_negative_mentions)])
    writer.writerow(["avg_negative_mentions_non_no_finding",
                     _fmt(summary.avg_negative_mentions_non_no_finding)])
    writer.writerow([])
    writer.writerow(["condition", "negative_mentions", "indication_mentions",
                     "pct_reports_with_negative_given_indication"])
    for condition, cstats in summary.per_condition:
        writer.writerow([
            condition.value, cstats.negative_mentions,
            cstats.indication_mentions,
            _fmt(cstats.pct_reports_with_negative_given_indication)])
    return buffer.getvalue()


def _print_summary(summary: stats.CorpusSummary) -> None:
    print(f"{'reports':44s} {summary.report_count}")
    print(f"{'% No Finding':44s} {_fmt(summary.pct_no_finding)}")
    print(f"{'avg positive mentions':44s} "
          f"{_fmt(summary.avg_positive_mentions)}")
    print(f"{'avg positive mentions (non-No-Finding)':44s} "
          f"{_fmt(summary.avg_positive_mentions_non_no_finding)}")
    print(f"{'avg negative mentions':44s} "
          f"{_fmt(summary.avg_negative_mentions)}")
    print(f"{'avg negative mentions (non-No-Finding)':44s} "
          f"{_fmt(summary.avg_negative_mentions_non_no_finding)}")
    print()
    print(f"{'condition':28s} {'neg':>6s} {'in-ind':>7s} {'% neg | ind':>12s}")
    for condition, cstats in summary.per_condition:
        pct = _fmt(cstats.pct_reports_with_negative_given_indication)
        print(f"{condition.value:28s} {cstats.negative_mentions:6d} "
              f"{cstats.indication_mentions:7d} {pct:>12s}")


def cmd_stats(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    corpus = corpus_io.read_reports_jsonl(args.infile)
    labels = _labels_for(args, corpus, lexicon)
    mentions = indication_mention_sets(corpus, lexicon)
    summary = stats.summarize(corpus, labels, mentions)
    corpus_io.write_text_atomic(args.out, _summary_csv(summary))
    if args.json:
        corpus_io.write_text_atomic(
            args.json,
            json.dumps(summary.to_dict(), ensure_ascii=False, sort_keys=True,
                       indent=2) + "\n")
    _print_summary(summary)
    _write_run_config(args.out, "stats", config,
                      {"in": args.infile, "labels": args.labels})
    return 0


def cmd_chi2(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    corpus = corpus_io.read_reports_jsonl(args.infile)
    labels = _labels_for(args, corpus, lexicon)
    mentions = indication_mention_sets(corpus, lexicon)
    if args.condition:
        try:
            conditions = [Condition.from_name(args.condition)]
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        conditions = [c for c in CONDITIONS if not c.is_no_finding]
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["condition", "p_in", "p_out", "statistic", "p_value",
                     "significant"])
    for condition in conditions:
        p_in, p_out, table = stats.conditional_negative_rates(
            corpus, labels, mentions, condition)
        try:
            statistic, p_value = stats.chi_square_test(table)
            significant = "***" if p_value < 0.001 else ""
            stat_text, p_text = _fmt(statistic), _fmt(p_value)
        except DegenerateTableError:
            stat_text = p_text = "NA"
            significant = ""
        writer.writerow([condition.value, _fmt(p_in), _fmt(p_out),
                         stat_text, p_text, significant])
    corpus_io.write_text_atomic(args.out, buffer.getvalue())
    _write_run_config(args.out, "chi2", config,
                      {"in": args.infile, "labels": args.labels})
    return 0


def cmd_shift(args) -> int:
    config = resolve_config(args)
    with open(args.a, "r", encoding="utf-8") as handle:
        summary_a = stats.CorpusSummary.from_dict(json.load(handle))
    with open(args.b, "r", encoding="utf-8") as handle:
        summary_b = stats.CorpusSummary.from_dict(json.load(handle))
    shift = stats.shift_report(summary_a, summary_b, config.shift_threshold)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["field", "a", "b", "delta", "relative", "flagged"])
    for delta in shift.fields:
        writer.writerow([delta.field, _fmt(delta.a), _fmt(delta.b),
                         _fmt(delta.delta), _fmt(delta.relative),
                         str(delta.flagged).lower()])
    if args.out:
        corpus_io.write_text_atomic(args.out, buffer.getvalue())
        _write_run_config(args.out, "shift", config,
                          {"a": args.a, "b": args.b})
    flagged = shift.flagged_fields()
    print(f"{len(flagged)} field(s) exceed relative delta "
          f"{shift.threshold:g}")
    for delta in flagged:
        print(f"  {delta.field}: {_fmt(delta.a)} -> {_fmt(delta.b)} "
              f"(relative {_fmt(delta.relative)})")
    return 0


def _make_rewrite_backend(args, config: Config):
    if args.backend == "pattern":
        return backends.PatternBackend()
    if not config.clean_endpoint:
        raise InputError(
            "remote cleaning backend requires an endpoint (flag "
            "--clean-endpoint, env RADPRAGMA_CLEAN_ENDPOINT, or config file)")
    return backends.RemoteRewriteBackend(
        config.clean_endpoint, auth_token=config.auth_token,
        timeout=config.timeout, retries=config.retries)


def cmd_clean(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    corpus = corpus_io.read_reports_jsonl(args.infile)
    backend = _make_rewrite_backend(args, config)
    workers = config.jobs
    if args.backend == "remote":
        workers = max(1, min(config.jobs, config.in_flight))

    def work(report):
        return cleaning.clean_report_audited(report, backend, lexicon=lexicon)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, corpus))
    else:
        results = [work(report) for report in corpus]
    cleaned = [report for report, _ in results]
    corpus_io.write_reports_jsonl(cleaned, args.out)
    if args.audit:
        lines = []
        for report, audits in zip(corpus, (a for _, a in results)):
            for audit in audits:
                record = {"study_id": report.study_id, **audit.to_dict()}
                lines.append(json.dumps(record, ensure_ascii=False,
                                        sort_keys=True))
        corpus_io.write_text_atomic(args.audit,
                                    "".join(line + "\n" for line in lines))
    _write_run_config(args.out, "clean", config,
                      {"in": args.infile, "backend": args.backend})
    return 0


def _read_sentences(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle]


def cmd_clean_eval(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    scores = cleaning.evaluate_cleaning(
        _read_sentences(args.machine), _read_sentences(args.manual),
        _read_sentences(args.original), lexicon)
    text = json.dumps(scores, ensure_ascii=False, sort_keys=True, indent=2)
    if args.out:
        corpus_io.write_text_atomic(args.out, text + "\n")
        _write_run_config(args.out, "clean-eval", config,
                          {"machine": args.machine, "manual": args.manual,
                           "original": args.original})
    print(text)
    return 0


def cmd_index(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    corpus = corpus_io.read_reports_jsonl(args.infile)
    index = generator.build_index(corpus, lexicon)
    index.save(args.out)
    _write_run_config(args.out, "index", config, {"in": args.infile})
    return 0


def _read_predictions(path: str) -> dict[str, frozenset]:
    labels = corpus_io.read_labels_csv(path)
    return {study_id: vector.positives()
            for study_id, vector in labels.items()}


def _build_requests(args) -> list[generator.GenerationRequest]:
    reports = corpus_io.read_reports_jsonl(args.requests)
    predictions = (_read_predictions(args.predictions)
                   if args.predictions else {})
    requests_out = []
    for report in reports:
        if args.predictions:
            if report.study_id not in predictions:
                raise InputError(
                    f"no prediction row for study_id {report.study_id!r}")
            positives = predictions[report.study_id]
        else:
            positives = frozenset()
        try:
            requests_out.append(generator.GenerationRequest(
                study_id=report.study_id, indication=report.indication,
                predicted_positives=positives))
        except ValueError as exc:
            raise InputError(f"study_id {report.study_id!r}: {exc}") from None
    return requests_out


def cmd_generate(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    requests_in = _build_requests(args)
    index = None
    if args.mode == "retrieval":
        index = generator.RetrievalIndex.load(args.index, lexicon)

        def work(request):
            return generator.generate_retrieval(request, index, lexicon)

        workers = config.jobs
    else:
        if not config.generation_endpoint:
            raise InputError(
                "remote generation requires an endpoint (flag "
                "--generation-endpoint, env RADPRAGMA_GENERATION_ENDPOINT, "
                "or config file)")

        def work(request):
            return generator.generate_remote(
                request, config.generation_endpoint,
                auth_token=config.auth_token, timeout=config.timeout)

        workers = max(1, min(config.jobs, config.in_flight))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, requests_in))
    else:
        results = [work(request) for request in requests_in]
    reports = [Report(study_id=request.study_id,
                      indication=request.indication,
                      impression=result.text)
               for request, result in zip(requests_in, results)]
    corpus_io.write_reports_jsonl(reports, args.out)
    if args.audit:
        lines = [json.dumps(result.audit_dict(), ensure_ascii=False,
                            sort_keys=True) for result in results]
        corpus_io.write_text_atomic(args.audit,
                                    "".join(line + "\n" for line in lines))
    _write_run_config(args.out, "generate", config,
                      {"requests": args.requests, "index": args.index,
                       "predictions": args.predictions, "mode": args.mode})
    return 0


_METRICS_CSV_COLUMNS = ["pos_f1", "pos_f1_5", "bleu2", "clean_bleu2",
                        "neg_f1", "neg_f1_5", "hallucination_rate"]


def cmd_evaluate(args) -> int:
    config = resolve_config(args)
    lexicon = _load_lexicon(config)
    catalog = _load_catalog(config)
    generated = corpus_io.read_reports_jsonl(args.generated)
    ref_original = corpus_io.read_reports_jsonl(args.ref_original)
    ref_clean = corpus_io.read_reports_jsonl(args.ref_clean)
    reference_labels = (corpus_io.read_labels_csv(args.ref_original_labels)
                        if args.ref_original_labels else None)
    report = metrics.evaluate_generation(
        generated, ref_original, ref_clean, lexicon, catalog,
        average=config.f1_average, reference_labels=reference_labels)
    corpus_io.write_text_atomic(
        args.out,
        json.dumps(report.to_dict(), ensure_ascii=False, sort_keys=True,
                   indent=2) + "\n")
    if args.csv:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(_METRICS_CSV_COLUMNS)
        row = report.to_dict()
        writer.writerow([_fmt(row[column]) for column in _METRICS_CSV_COLUMNS])
        corpus_io.write_text_atomic(args.csv, buffer.getvalue())
    print("Positive F1-5 conditions: "
          + ", ".join(c.value for c in report.pos_f1_5_conditions))
    for column in _METRICS_CSV_COLUMNS:
        print(f"{column:20s} {_fmt(report.to_dict()[column])}")
    _write_run_config(args.out, "evaluate", config,
                      {"generated": args.generated,
                       "ref_original": args.ref_original,
                       "ref_clean": args.ref_clean,
                       "ref_original_labels": args.ref_original_labels})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int,
                        help="recorded for reproducibility; all core "
                             "operations are deterministic regardless")
    parser.add_argument("--lexicon", help="lexicon JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="radpragma",
        description="Pragmatic radiology-report corpus toolkit.",
        epilog="Configuration precedence: command-line flag, then "
               f"{ENV_PREFIX}* environment variable, then --config file, "
               "then built-in default.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("label", help="label a corpus to CSV")
    _common_flags(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_label)

    p = subparsers.add_parser("stats", help="corpus mention statistics")
    _common_flags(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--labels", help="precomputed label CSV")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--json", help="also write the summary as JSON")
    p.set_defaults(handler=cmd_stats)

    p = subparsers.add_parser(
        "chi2", help="indication vs negative-mention chi-square test")
    _common_flags(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--labels", help="precomputed label CSV")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--condition", help="single condition name")
    group.add_argument("--all", action="store_true",
                       help="all conditions (default)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_chi2)

    p = subparsers.add_parser("shift", help="diff two corpus summaries")
    _common_flags(p)
    p.add_argument("--a", required=True, help="summary JSON for split A")
    p.add_argument("--b", required=True, help="summary JSON for split B")
    p.add_argument("--threshold", dest="shift_threshold", type=float,
                   help="relative-delta flag threshold (default 0.25)")
    p.add_argument("--out", help="optional CSV output")
    p.set_defaults(handler=cmd_shift)

    p = subparsers.add_parser("clean", help="clean a corpus")
    _common_flags(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["pattern", "remote"],
                   default="pattern")
    p.add_argument("--audit", help="per-sentence audit JSONL path")
    p.add_argument("--jobs", type=int)
    p.add_argument("--clean-endpoint", dest="clean_endpoint")
    p.set_defaults(handler=cmd_clean)

    p = subparsers.add_parser(
        "clean-eval", help="score machine cleaning against manual cleaning")
    _common_flags(p)
    p.add_argument("--machine", required=True, help="one sentence per line")
    p.add_argument("--manual", required=True)
    p.add_argument("--original", required=True)
    p.add_argument("--out", help="optional JSON output")
    p.set_defaults(handler=cmd_clean_eval)

    p = subparsers.add_parser("index", help="build a retrieval index")
    _common_flags(p)
    p.add_argument("--in", dest="infile", required=True,
                   help="cleaned corpus JSONL")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_index)

    p = subparsers.add_parser("generate", help="generate reports")
    _common_flags(p)
    p.add_argument("--requests", required=True,
                   help="report JSONL carrying study_id and indication")
    p.add_argument("--predictions",
                   help="CSV with 1.0 marking predicted positives")
    p.add_argument("--index", help="retrieval index path")
    p.add_argument("--mode", choices=["retrieval", "remote"],
                   default="retrieval")
    p.add_argument("--out", required=True)
    p.add_argument("--audit", help="per-request audit JSONL path")
    p.add_argument("--jobs", type=int)
    p.add_argument("--generation-endpoint", dest="generation_endpoint")
    p.set_defaults(handler=cmd_generate)

    p = subparsers.add_parser("evaluate", help="score a generated corpus")
    _common_flags(p)
    p.add_argument("--generated", required=True)
    p.add_argument("--ref-original", dest="ref_original", required=True)
    p.add_argument("--ref-clean", dest="ref_clean", required=True)
    p.add_argument("--ref-original-labels", dest="ref_original_labels",
                   help="precomputed label CSV for the original references")
    p.add_argument("--keywords", help="keyword catalog JSON path")
    p.add_argument("--average", dest="f1_average",
                   choices=["macro", "micro"])
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--csv", help="optional one-row metrics CSV")
    p.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except BackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, DegenerateTableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
