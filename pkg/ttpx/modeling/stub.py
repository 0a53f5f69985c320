"""Deterministic backends that need no model download.

Hashing rule (HashingEmbedder): a sentence is lower-cased and split on
whitespace, surrounding punctuation is stripped from each word, and words
beyond `max_tokens` are dropped. Word `w` adds `sign(w)` to bucket
`bucket(w)` where both come from the SHA-256 digest of `w`: the first eight
bytes (big-endian) modulo `dimension` give the bucket, the lowest bit of the
ninth byte gives the sign (1 -> -1.0, 0 -> +1.0). The count vector is
L2-normalised; a sentence with no words left embeds to the first basis
vector.
"""

import hashlib
from functools import lru_cache

import numpy as np

from ttpx.modeling.backends import EmbeddingBackend, MaskedLMBackend, MaskedPrediction
from ttpx.modeling.registry import EMBEDDING, MLM, BackendRegistry

_PUNCTUATION = "\"'`.,;:!?()[]{}<>"


def stub_words(sentence: str) -> list[str]:
    words = (w.strip(_PUNCTUATION).lower() for w in sentence.split())
    return [w for w in words if w]


@lru_cache(maxsize=65536)
def _bucket_and_sign(word: str, dimension: int) -> tuple[int, float]:
    digest = hashlib.sha256(word.encode("utf-8")).digest()
    bucket = int.from_bytes(digest[:8], "big") % dimension
    sign = -1.0 if digest[8] & 1 else 1.0
    return bucket, sign


@BackendRegistry.register("stub", kind=EMBEDDING)
class HashingEmbedder(EmbeddingBackend):
    concurrency_safe = True

    def __init__(self, dimension: int = 768, max_tokens: int = 256):
        super().__init__(max_tokens=max_tokens)
        self.dimension = dimension

    @property
    def reference(self) -> str:
        return f"stub:hashing-{self.dimension}"

    def _embed(self, sentence: str) -> np.ndarray:
        words = stub_words(sentence)
        if len(words) > self.max_tokens:
            self.truncated_count += 1
            words = words[: self.max_tokens]
        vector = np.zeros(self.dimension)
        for word in words:
            bucket, sign = _bucket_and_sign(word, self.dimension)
            vector[bucket] += sign
        norm = np.linalg.norm(vector)
        if norm == 0:
            vector[0] = 1.0
            return vector
        return vector / norm

    def options(self) -> dict:
        return {**super().options(), "dimension": self.dimension}


@BackendRegistry.register("stub", kind=MLM)
class StubMaskedLM(MaskedLMBackend):
    """Masked-word predictions from a fixed table keyed by the masked
    sentence. Sentences missing from the table fall back to `vocabulary`,
    ranked by the SHA-256 digest of (masked sentence, word); probabilities
    are 1/(rank+1) normalised over the vocabulary."""

    concurrency_safe = True

    def __init__(
        self,
        table: dict[str, list] | None = None,
        vocabulary: list[str] | None = None,
        mask_token: str = "<mask>",
    ):
        super().__init__(mask_token=mask_token)
        self.table = {
            key: [MaskedPrediction(word, float(p)) for word, p in candidates]
            for key, candidates in (table or {}).items()
        }
        self.vocabulary = sorted(set(vocabulary or []))

    def _predict(self, sentence_with_mask: str, k: int) -> list[MaskedPrediction]:
        if sentence_with_mask in self.table:
            return list(self.table[sentence_with_mask])
        if not self.vocabulary:
            return []
        ranked = sorted(
            self.vocabulary,
            key=lambda word: hashlib.sha256(
                f"{sentence_with_mask}\x1f{word}".encode("utf-8")
            ).hexdigest(),
        )
        weights = np.array([1.0 / (rank + 1) for rank in range(len(ranked))])
        weights /= weights.sum()
        return [MaskedPrediction(word, float(p)) for word, p in zip(ranked, weights)]
