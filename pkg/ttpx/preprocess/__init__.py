from ttpx.preprocess.citations import strip_citations
from ttpx.preprocess.ioc import (
    IOCRule,
    NormalizationReport,
    NormalizedSentence,
    default_rules,
    load_ioc_rules,
    normalize_iocs,
    refang,
)
from ttpx.preprocess.segment import segment_report


def preprocess_sentence(
    text: str, sentence_index: int = 0, rules=None, defang: bool = False
) -> NormalizedSentence:
    """The normalization applied before both training and inference."""
    if defang:
        text = refang(text)
    return normalize_iocs(strip_citations(text).strip(), sentence_index, rules)
