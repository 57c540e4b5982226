"""Pragmatic radiology-report corpus toolkit.

Rule-based condition labeling, indication-conditioned negative-mention
statistics, compositional report cleaning with a label-preservation guard,
pragmatics-aware evaluation metrics, and label-set retrieval generation.
"""

from .backends import PatternBackend, RemoteRewriteBackend
from .cleaning import (DEFAULT_RULES, REMOVED, CleaningRule, apply_rule,
                       clean_report, clean_sentence, evaluate_cleaning)
from .errors import BackendError, DegenerateTableError, InputError
from .generator import (GenerationRequest, RetrievalIndex,
                        build_generation_prompt, build_index,
                        generate_remote, generate_retrieval)
from .labeler import (Lexicon, default_lexicon, indication_mentions,
                      label_report, label_sentence)
from .metrics import (KeywordCatalog, MetricsReport, bleu2, default_catalog,
                      evaluate_generation, hallucination_rate, negative_f1,
                      positive_f1)
from .model import (CONDITIONS, Condition, LabelValue, LabelVector, Report,
                    Sentence, normalize_text, segment_sentences)
from .stats import (ContingencyTable2x2, CorpusSummary, chi_square_test,
                    conditional_negative_rates, shift_report, summarize)

__version__ = "0.1.0"
