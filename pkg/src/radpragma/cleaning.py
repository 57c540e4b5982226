"""Compositional report cleaning with a label-preservation guard.

Seven rewrite rules run one at a time, in rule-id order, over each sentence.
A rule only fires when one of its trigger cues appears in the sentence, so
the backend is never invoked on sentences the rule cannot apply to. After
every rule the candidate is relabeled: if any of the fourteen condition
labels differs from the sentence's pre-rule labels, the change is discarded.
A rule may delete a sentence by returning the literal token ``REMOVED``;
deletions are only accepted when the pre-rule sentence carried no mention of
any condition.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Sequence

from .errors import BackendError, InputError
from .labeler import Lexicon, default_lexicon, label_sentence
from .model import (LabelVector, Report, any_stem_match, normalize_text,
                    segment_sentences, tokenize)

#: Sentinel marking a sentence deleted by a cleaning rule.
REMOVED = "REMOVED"


class RuleAction(Enum):
    REMOVE_SENTENCE = "remove-sentence"
    REMOVE_PHRASE = "remove-phrase"
    REWRITE_POSITIVE = "rewrite-positive"
    REWRITE_NEGATIVE = "rewrite-negative"


@dataclass(frozen=True)
class CleaningRule:
    """One rewrite rule: id, trigger cues, and its backend prompt."""

    rule_id: int
    name: str
    action: RuleAction
    trigger_cues: tuple[str, ...]
    prompt_template: str

    def __post_init__(self):
        if not 1 <= self.rule_id <= 7:
            raise ValueError(f"rule id out of range: {self.rule_id}")
        if REMOVED not in self.prompt_template:
            raise ValueError(
                f"rule {self.rule_id} prompt lacks the {REMOVED} contract")

    def triggered_by(self, sentence: str) -> bool:
        return any_stem_match(tokenize(sentence), self.trigger_cues)


_PROMPT_1 = (
    'You will be given a sentence from a chest X-ray report. Remove ALL '
    'sentences that contain comparisons to the past, and rewrite sentences '
    'minimally to preserve meaning. If a sentence contains the word '
    '"compare", remove it. If a sentence is empty after cleaning, replace '
    'it with the token "REMOVED". If a sentence contains "REMOVED", do not '
    'change it.')
_PROMPT_2 = (
    'You will be given a sentence from a chest X-ray report. Remove ALL '
    'sentences that contain information about communication between medical '
    'professionals, such as between doctors or nurses. If a sentence is '
    'empty after cleaning, replace it with the token "REMOVED". If a '
    'sentence contains "REMOVED", do not change it.')
_PROMPT_3 = (
    'You will be given a sentence from a chest X-ray report. Remove ALL '
    'sentences that mention medical recommendations from doctors. Remove '
    'sentences that contain "recommend". If a sentence is empty after '
    'cleaning, replace it with the token "REMOVED". If a sentence contains '
    '"REMOVED", do not change it.')
_PROMPT_4 = (
    'You will be given a sentence from a chest X-ray report. Remove ALL '
    'sentences that mention the chest X-ray view (e.g. AP, PA, lateral) or '
    '"status post". Rewrite sentences minimally to preserve meaning. If a '
    'sentence is empty after cleaning, replace it with the token "REMOVED". '
    'If a sentence is empty or contains "REMOVED", do not change it.')
_PROMPT_5 = (
    'You will be given a sentence from a chest X-ray report. Remove all '
    'instances of "new", "increase", "greater", "worsen", etc. and rewrite '
    'the sentence to preserve meaning. If the sentence mentions changes to '
    'an organ (e.g. lung, heart), do not rewrite it. If a sentence contains '
    '"REMOVED", do not change it.')
_PROMPT_6 = (
    'You will be given a sentence from a chest X-ray report. If a sentence '
    'mentions that a positive medical condition is unchanged or improved '
    '(but still positive), remove words related to "unchanged" or "improve" '
    'and rewrite the sentence to only say the condition. Otherwise, keep it '
    'the same. If a sentence contains "REMOVED", do not change it.')
_PROMPT_7 = (
    'You will be given a sentence from a chest X-ray report. If the '
    'sentence mentions the resolution or disappearance of a condition, '
    'rewrite it to simply say the condition is negative. Otherwise, keep '
    'the sentence the same. If a sentence is empty or contains "REMOVED", '
    'do not change it.')

DEFAULT_RULES: tuple[CleaningRule, ...] = (
    CleaningRule(1, "Remove comparison to prior studies",
                 RuleAction.REMOVE_PHRASE,
                 ("compar",), _PROMPT_1),
    CleaningRule(2, "Remove communication information",
                 RuleAction.REMOVE_SENTENCE,
                 ("commun", "convey", "relay", "notif", "paged", "telephone",
                  "phone", "discussed", "dashboard"), _PROMPT_2),
    CleaningRule(3, "Remove doctor recommendations",
                 RuleAction.REMOVE_SENTENCE,
                 ("recommend", "suggest", "should", "advis"), _PROMPT_3),
    CleaningRule(4, "Remove previous treatment and image view",
                 RuleAction.REMOVE_PHRASE,
                 ("status", "view", "ap", "pa", "lateral", "frontal",
                  "portable", "upright", "supine"), _PROMPT_4),
    CleaningRule(5, "Rewrite new/increased conditions into positive",
                 RuleAction.REWRITE_POSITIVE,
                 ("new", "newly", "increas", "greater", "worse", "worsen",
                  "larger", "enlarg", "progress", "develop"), _PROMPT_5),
    CleaningRule(6, "Rewrite unchanged/partially-improved conditions into "
                    "positive",
                 RuleAction.REWRITE_POSITIVE,
                 ("unchanged", "improv", "stable", "persist"), _PROMPT_6),
    CleaningRule(7, "Rewrite resolved conditions into negative",
                 RuleAction.REWRITE_NEGATIVE,
                 ("resolv", "resolut", "disappear", "cleared"), _PROMPT_7),
)


def build_rewrite_prompt(rule: CleaningRule, sentence: str) -> str:
    """Full prompt sent to a rewriting backend for one sentence."""
    return f"{rule.prompt_template}\n\nOriginal:\n{sentence}\nNew:\n"


class RewriteBackend(Protocol):
    """Given (rule, sentence), produce a rewritten sentence or REMOVED.

    Implementations must be deterministic per (rule, sentence) within a run.
    """

    def rewrite(self, rule: CleaningRule, sentence: str) -> str: ...


def apply_rule(sentence: str, rule: CleaningRule,
               backend: RewriteBackend) -> str:
    """Apply one rule to one sentence.

    Sentences without any trigger cue pass through without invoking the
    backend; REMOVED inputs are never changed. Output is normalized, with an
    empty rewrite mapped to REMOVED.
    """
    sentence = normalize_text(sentence)
    if sentence == REMOVED or not sentence:
        return sentence
    if not rule.triggered_by(sentence):
        return sentence
    try:
        rewritten = backend.rewrite(rule, sentence)
    except BackendError as exc:
        if exc.rule_id is None:
            exc.rule_id = rule.rule_id
        raise
    rewritten = normalize_text(rewritten)
    return rewritten if rewritten else REMOVED


@dataclass(frozen=True)
class RuleOutcome:
    """Audit record for one rule application within a sentence."""

    rule_id: int
    candidate: str
    accepted: bool
    reason: str  # accepted | no-change | removed | guard-discarded-rewrite |
    #              guard-discarded-removal

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "candidate": self.candidate,
                "accepted": self.accepted, "reason": self.reason}


def clean_sentence_audited(sentence: str,
                           backend: RewriteBackend,
                           rules: Sequence[CleaningRule] = DEFAULT_RULES,
                           lexicon: Optional[Lexicon] = None,
                           ) -> tuple[str, list[RuleOutcome]]:
    """Fold the rules over a sentence under the label guard; keep an audit."""
    lexicon = lexicon or default_lexicon()
    rules = _check_rule_order(rules)
    current = normalize_text(sentence)
    outcomes: list[RuleOutcome] = []
    if current == REMOVED or not current:
        return current, outcomes
    current_labels = label_sentence(current, lexicon)
    no_mentions = current_labels == LabelVector.all_not_mentioned()
    for rule in rules:
        candidate = apply_rule(current, rule, backend)
        if candidate == current:
            outcomes.append(RuleOutcome(rule.rule_id, candidate, True,
                                        "no-change"))
            continue
        if candidate == REMOVED:
            if no_mentions:
                outcomes.append(RuleOutcome(rule.rule_id, candidate, True,
                                            "removed"))
                return REMOVED, outcomes
            outcomes.append(RuleOutcome(rule.rule_id, candidate, False,
                                        "guard-discarded-removal"))
            continue
        if label_sentence(candidate, lexicon) == current_labels:
            outcomes.append(RuleOutcome(rule.rule_id, candidate, True,
                                        "accepted"))
            current = candidate
        else:
            outcomes.append(RuleOutcome(rule.rule_id, candidate, False,
                                        "guard-discarded-rewrite"))
    return current, outcomes


def clean_sentence(sentence: str, backend: RewriteBackend,
                   rules: Sequence[CleaningRule] = DEFAULT_RULES,
                   lexicon: Optional[Lexicon] = None) -> str:
    final, _ = clean_sentence_audited(sentence, backend, rules, lexicon)
    return final


def _check_rule_order(rules: Sequence[CleaningRule]) -> Sequence[CleaningRule]:
    ids = [rule.rule_id for rule in rules]
    if ids != sorted(ids) or len(set(ids)) != len(ids):
        raise InputError(f"rules must be ordered by unique id, got {ids}")
    return rules


@dataclass(frozen=True)
class SentenceAudit:
    index: int
    original: str
    final: str
    outcomes: tuple[RuleOutcome, ...]

    def to_dict(self) -> dict:
        return {"index": self.index, "original": self.original,
                "final": self.final,
                "outcomes": [o.to_dict() for o in self.outcomes]}


def clean_report_audited(report: Report, backend: RewriteBackend,
                         rules: Sequence[CleaningRule] = DEFAULT_RULES,
                         lexicon: Optional[Lexicon] = None,
                         ) -> tuple[Report, list[SentenceAudit]]:
    """Clean every sentence of a report's impression.

    REMOVED sentences are dropped; the rest are rejoined with single spaces.
    Indication, study_id, and findings pass through untouched. The guard
    guarantees the cleaned impression relabels identically to the original.
    """
    lexicon = lexicon or default_lexicon()
    audits: list[SentenceAudit] = []
    kept: list[str] = []
    for sentence in segment_sentences(report.impression):
        try:
            final, outcomes = clean_sentence_audited(
                sentence.text, backend, rules, lexicon)
        except BackendError as exc:
            if exc.sentence_index is None:
                exc.sentence_index = sentence.index
            if exc.study_id is None:
                exc.study_id = report.study_id
            raise
        audits.append(SentenceAudit(sentence.index, sentence.text, final,
                                    tuple(outcomes)))
        if final != REMOVED:
            kept.append(final)
    cleaned = Report(study_id=report.study_id, impression=" ".join(kept),
                     indication=report.indication, findings=report.findings)
    return cleaned, audits


def clean_report(report: Report, backend: RewriteBackend,
                 rules: Sequence[CleaningRule] = DEFAULT_RULES,
                 lexicon: Optional[Lexicon] = None) -> Report:
    cleaned, _ = clean_report_audited(report, backend, rules, lexicon)
    return cleaned


def evaluate_cleaning(machine_cleaned: Sequence[str],
                      manual_cleaned: Sequence[str],
                      originals: Sequence[str],
                      lexicon: Optional[Lexicon] = None) -> dict[str, float]:
    """Sentence-level cleaning scores.

    Label preservation (pos_f1/neg_f1, micro-averaged) compares labels of
    the machine-cleaned sentences against the originals; exact-match
    accuracy and BLEU-2 compare machine output against the manual cleanings.
    """
    from .metrics import bleu2, exact_match_accuracy, negative_f1, positive_f1
    if not (len(machine_cleaned) == len(manual_cleaned) == len(originals)):
        raise InputError(
            f"cleaning evaluation inputs misaligned: "
            f"{len(machine_cleaned)} machine, {len(manual_cleaned)} manual, "
            f"{len(originals)} original sentences")
    lexicon = lexicon or default_lexicon()

    def labels_of(text: str) -> LabelVector:
        if normalize_text(text) == REMOVED:
            return LabelVector.all_not_mentioned()
        return label_sentence(text, lexicon)

    pred = {str(i): labels_of(s) for i, s in enumerate(machine_cleaned)}
    ref = {str(i): labels_of(s) for i, s in enumerate(originals)}
    pos, _ = positive_f1(pred, ref, average="micro")
    neg, _ = negative_f1(pred, ref, average="micro")
    return {
        "pos_f1": pos,
        "neg_f1": neg,
        "em_accuracy": exact_match_accuracy(machine_cleaned, manual_cleaned),
        "bleu2": bleu2(machine_cleaned, manual_cleaned),
    }
