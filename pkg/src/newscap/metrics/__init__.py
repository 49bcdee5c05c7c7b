"""Caption evaluation: BLEU-4, ROUGE-L, CIDEr-D and entity P/R/F1."""

from newscap.metrics.bleu import bleu4
from newscap.metrics.cider import cider_d, cider_d_scores
from newscap.metrics.corpus import EvalCorpus, EvalItem, read_corpus
from newscap.metrics.entities import PRF, EntityScoringError, entity_prf, normalize_entity
from newscap.metrics.report import EvalReport, evaluate
from newscap.metrics.rouge import lcs_length, rouge_l

__all__ = [
    "PRF",
    "EntityScoringError",
    "EvalCorpus",
    "EvalItem",
    "EvalReport",
    "bleu4",
    "cider_d",
    "cider_d_scores",
    "entity_prf",
    "evaluate",
    "lcs_length",
    "normalize_entity",
    "read_corpus",
    "rouge_l",
]
