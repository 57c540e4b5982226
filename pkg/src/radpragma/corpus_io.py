"""Corpus I/O: report JSONL and label CSV, with lossless round-trips.

Formats:
  report-jsonl  one JSON object per line, keys: study_id (required),
                impression (required), indication (default ""),
                findings (optional).
  label-csv     header ``study_id,<14 condition names in canonical order>``,
                cells 1.0 / 0.0 / -1.0 / empty.

All writes are atomic (temp file in the target directory, then rename).
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from typing import Iterable, Mapping

from .errors import InputError
from .model import CONDITIONS, LabelValue, LabelVector, Report

REPORT_JSONL = "report-jsonl"
LABEL_CSV = "label-csv"


def write_text_atomic(path: str, text: str) -> None:
    """Write text to ``path`` so that no partial file is ever visible."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _report_from_obj(obj: dict, where: str) -> Report:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected a JSON object")
    for field in ("study_id", "impression"):
        if field not in obj:
            raise InputError(f"{where}: missing field {field!r}")
        if not isinstance(obj[field], str):
            raise InputError(f"{where}: field {field!r} must be a string")
    indication = obj.get("indication", "")
    if not isinstance(indication, str):
        raise InputError(f"{where}: field 'indication' must be a string")
    findings = obj.get("findings")
    if findings is not None and not isinstance(findings, str):
        raise InputError(f"{where}: field 'findings' must be a string")
    return Report(study_id=obj["study_id"], impression=obj["impression"],
                  indication=indication, findings=findings)


def read_reports_jsonl(path: str) -> list[Report]:
    reports: list[Report] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{where}: invalid JSON: {exc.msg}") from None
            report = _report_from_obj(obj, where)
            if report.study_id in seen:
                raise InputError(
                    f"{where}: duplicate study_id {report.study_id!r}")
            seen.add(report.study_id)
            reports.append(report)
    return reports


def reports_jsonl_text(reports: Iterable[Report]) -> str:
    lines = []
    for report in reports:
        obj = {"study_id": report.study_id, "indication": report.indication,
               "impression": report.impression}
        if report.findings is not None:
            obj["findings"] = report.findings
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def write_reports_jsonl(reports: Iterable[Report], path: str) -> None:
    write_text_atomic(path, reports_jsonl_text(reports))


_LABEL_HEADER = ["study_id"] + [c.value for c in CONDITIONS]


def read_labels_csv(path: str) -> dict[str, LabelVector]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty label CSV") from None
        _check_label_header(path, header)
        labels: dict[str, LabelVector] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(_LABEL_HEADER):
                raise InputError(
                    f"{where}: expected {len(_LABEL_HEADER)} cells, "
                    f"got {len(row)}")
            study_id = row[0]
            if study_id in labels:
                raise InputError(f"{where}: duplicate study_id {study_id!r}")
            values = []
            for condition, cell in zip(CONDITIONS, row[1:]):
                try:
                    values.append(LabelValue.from_csv(cell))
                except ValueError as exc:
                    raise InputError(
                        f"{where}: column {condition.value!r}: {exc}") from None
            try:
                labels[study_id] = LabelVector(tuple(values))
            except ValueError as exc:
                raise InputError(f"{where}: {exc}") from None
    return labels


def _check_label_header(path: str, header: list[str]) -> None:
    if header == _LABEL_HEADER:
        return
    missing = [name for name in _LABEL_HEADER if name not in header]
    unknown = [name for name in header if name not in _LABEL_HEADER]
    if missing:
        raise InputError(f"{path}: missing condition column: "
                         f"{', '.join(missing)}")
    if unknown:
        raise InputError(f"{path}: unknown condition column: "
                         f"{', '.join(unknown)}")
    raise InputError(f"{path}: label columns out of canonical order")


def labels_csv_text(labels: Mapping[str, LabelVector]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_LABEL_HEADER)
    for study_id, vector in labels.items():
        writer.writerow([study_id] + [v.to_csv() for v in vector.values])
    return buffer.getvalue()


def write_labels_csv(labels: Mapping[str, LabelVector], path: str) -> None:
    write_text_atomic(path, labels_csv_text(labels))


def read_corpus(path: str, format: str):
    """Dispatching reader for the two corpus formats."""
    if format == REPORT_JSONL:
        return read_reports_jsonl(path)
    if format == LABEL_CSV:
        return read_labels_csv(path)
    raise InputError(f"unknown corpus format: {format!r}")


def write_corpus(data, path: str, format: str) -> None:
    if format == REPORT_JSONL:
        write_reports_jsonl(data, path)
    elif format == LABEL_CSV:
        write_labels_csv(data, path)
    else:
        raise InputError(f"unknown corpus format: {format!r}")
