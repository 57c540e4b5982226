"""Core domain types plus text normalization and sentence segmentation.

Everything downstream (labeling, cleaning, metrics, retrieval) works on the
types defined here. All types are immutable after construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional


class Condition(Enum):
    """The fourteen report conditions, in canonical (CSV column) order."""

    ATELECTASIS = "Atelectasis"
    CARDIOMEGALY = "Cardiomegaly"
    CONSOLIDATION = "Consolidation"
    EDEMA = "Edema"
    ENLARGED_CARDIOMEDIASTINUM = "Enlarged Cardiomediastinum"
    FRACTURE = "Fracture"
    LUNG_LESION = "Lung Lesion"
    LUNG_OPACITY = "Lung Opacity"
    PLEURAL_EFFUSION = "Pleural Effusion"
    PLEURAL_OTHER = "Pleural Other"
    PNEUMONIA = "Pneumonia"
    PNEUMOTHORAX = "Pneumothorax"
    SUPPORT_DEVICES = "Support Devices"
    NO_FINDING = "No Finding"

    @property
    def is_no_finding(self) -> bool:
        return self is Condition.NO_FINDING

    @classmethod
    def from_name(cls, name: str) -> "Condition":
        try:
            return _CONDITION_BY_NAME[name]
        except KeyError:
            raise ValueError(f"unknown condition: {name!r}") from None


#: Canonical, total ordering of the fourteen conditions.
CONDITIONS: tuple[Condition, ...] = tuple(Condition)

_CONDITION_BY_NAME = {c.value: c for c in CONDITIONS}
_CONDITION_INDEX = {c: i for i, c in enumerate(CONDITIONS)}


class LabelValue(Enum):
    """Four-valued mention status of a condition in a text unit."""

    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNCERTAIN = "uncertain"
    NOT_MENTIONED = "not-mentioned"

    def to_csv(self) -> str:
        return _CSV_BY_VALUE[self]

    @classmethod
    def from_csv(cls, cell: str) -> "LabelValue":
        cell = cell.strip()
        if cell == "":
            return cls.NOT_MENTIONED
        try:
            return _VALUE_BY_CSV[float(cell)]
        except (ValueError, KeyError):
            raise ValueError(f"invalid label cell: {cell!r}") from None


_CSV_BY_VALUE = {
    LabelValue.POSITIVE: "1.0",
    LabelValue.NEGATIVE: "0.0",
    LabelValue.UNCERTAIN: "-1.0",
    LabelValue.NOT_MENTIONED: "",
}
_VALUE_BY_CSV = {1.0: LabelValue.POSITIVE, 0.0: LabelValue.NEGATIVE,
                 -1.0: LabelValue.UNCERTAIN}

#: Mention statuses that count as a mention (everything but not-mentioned).
MENTION_VALUES = frozenset({LabelValue.POSITIVE, LabelValue.NEGATIVE,
                            LabelValue.UNCERTAIN})


@dataclass(frozen=True)
class LabelVector:
    """Per-condition mention status for one text unit.

    Stored as a tuple in canonical condition order. No Finding only admits
    positive or not-mentioned.
    """

    values: tuple[LabelValue, ...]

    def __post_init__(self):
        if len(self.values) != len(CONDITIONS):
            raise ValueError(
                f"label vector needs {len(CONDITIONS)} entries, "
                f"got {len(self.values)}")
        nf = self.values[_CONDITION_INDEX[Condition.NO_FINDING]]
        if nf not in (LabelValue.POSITIVE, LabelValue.NOT_MENTIONED):
            raise ValueError(f"No Finding admits only positive or "
                             f"not-mentioned, got {nf.value}")

    @classmethod
    def all_not_mentioned(cls) -> "LabelVector":
        return _ALL_NOT_MENTIONED

    @classmethod
    def from_mapping(cls, mapping: Mapping[Condition, LabelValue]) -> "LabelVector":
        return cls(tuple(mapping.get(c, LabelValue.NOT_MENTIONED)
                         for c in CONDITIONS))

    def get(self, condition: Condition) -> LabelValue:
        return self.values[_CONDITION_INDEX[condition]]

    def as_mapping(self) -> dict[Condition, LabelValue]:
        return dict(zip(CONDITIONS, self.values))

    def positives(self) -> frozenset[Condition]:
        return frozenset(c for c, v in zip(CONDITIONS, self.values)
                         if v is LabelValue.POSITIVE)

    def mentions(self) -> frozenset[Condition]:
        return frozenset(c for c, v in zip(CONDITIONS, self.values)
                         if v in MENTION_VALUES)


_ALL_NOT_MENTIONED = LabelVector(
    tuple(LabelValue.NOT_MENTIONED for _ in CONDITIONS))


@dataclass(frozen=True)
class Report:
    """One study's text. The impression is the unit of all scoring."""

    study_id: str
    impression: str
    indication: str = ""
    findings: Optional[str] = None


@dataclass(frozen=True)
class Sentence:
    """One segmented sentence with its 0-based position in the parent text."""

    text: str
    index: int


_DEID_RUN = re.compile(r"_{3,}")
_WHITESPACE_RUN = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    """Collapse whitespace runs, trim ends, canonicalize de-id underscores.

    Case and punctuation are preserved; runs of three or more underscores
    become the canonical ``___`` token. Idempotent and total.
    """
    text = _DEID_RUN.sub("___", raw)
    return _WHITESPACE_RUN.sub(" ", text).strip()


# Sentence boundaries: terminal punctuation, whitespace, then an uppercase
# letter or digit. Splits are vetoed after known abbreviations and single
# capital initials ("John Q. Public").
_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[A-Z0-9])")
_ABBREVIATIONS = frozenset({"dr.", "a.m.", "p.m.", "e.g.", "i.e.", "vs."})
_SINGLE_INITIAL = re.compile(r"[A-Z]\.")


def _vetoed_split(text: str, boundary_start: int) -> bool:
    if text[boundary_start - 1] != ".":
        return False
    token = text[:boundary_start].rsplit(" ", 1)[-1]
    return (token.lower() in _ABBREVIATIONS
            or _SINGLE_INITIAL.fullmatch(token) is not None)


def segment_sentences(text: str) -> list[Sentence]:
    """Split normalized text into sentences.

    The result partitions the text: joining the sentence texts in index
    order with single spaces reproduces the normalized input.
    """
    text = normalize_text(text)
    if not text:
        return []
    pieces: list[str] = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        if _vetoed_split(text, match.start()):
            continue
        pieces.append(text[start:match.start()])
        start = match.end()
    pieces.append(text[start:])
    return [Sentence(piece, i) for i, piece in enumerate(pieces)]


_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens, split on everything else."""
    return _TOKEN.findall(text.lower())


def matches_stem(token: str, stem: str) -> bool:
    """Prefix match for stems of length >= 4, exact match for shorter ones.

    The exact-match rule keeps two-letter stems like "ap"/"pa" from firing
    inside ordinary words.
    """
    if len(stem) <= 3:
        return token == stem
    return token.startswith(stem)


def any_stem_match(tokens: Iterable[str], stems: Iterable[str]) -> bool:
    stems = tuple(stems)
    return any(matches_stem(token, stem) for token in tokens for stem in stems)
