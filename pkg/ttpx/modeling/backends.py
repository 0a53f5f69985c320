import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ttpx.errors import BackendError


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    dimension: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.dimension:
            raise BackendError(
                f"embedding has shape {values.shape}, expected ({self.dimension},)"
            )
        if not np.all(np.isfinite(values)):
            raise BackendError("embedding contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MaskedPrediction:
    word: str
    probability: float

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise BackendError(
                f"candidate {self.word!r} has probability {self.probability} outside [0, 1]"
            )


def count_masks(sentence: str, mask_token: str) -> int:
    return sentence.count(mask_token)


class EmbeddingBackend(ABC):
    """Sentence -> fixed-length vector."""

    registered_name: str = None
    dimension: int = None
    concurrency_safe: bool = True
    supports_gradients: bool = False

    def __init__(self, max_tokens: int = 256):
        self.max_tokens = max_tokens
        # Number of inputs cut at max_tokens so far.
        self.truncated_count = 0

    @property
    @abstractmethod
    def reference(self) -> str:
        """Identifier of the checkpoint (or stub rule) behind this backend."""

    @abstractmethod
    def _embed(self, sentence: str) -> np.ndarray:
        pass

    def embed(self, sentence: str) -> EmbeddingVector:
        if not sentence or not sentence.strip():
            raise ValueError("cannot embed an empty sentence")
        return EmbeddingVector(self._embed(sentence), self.dimension)

    def embed_batch(self, sentences: list[str]) -> np.ndarray:
        if not sentences:
            return np.zeros((0, self.dimension))
        return np.stack([self.embed(s).values for s in sentences])

    def options(self) -> dict:
        """Constructor arguments needed to rebuild an equivalent backend."""
        return {"max_tokens": self.max_tokens}


class MaskedLMBackend(ABC):
    """Masked-word prediction."""

    registered_name: str = None
    concurrency_safe: bool = True

    def __init__(self, mask_token: str = "<mask>"):
        self.mask_token = mask_token

    @abstractmethod
    def _predict(self, sentence_with_mask: str, k: int) -> list[MaskedPrediction]:
        pass

    def predict_masked(self, sentence_with_mask: str, k: int) -> list[MaskedPrediction]:
        masks = count_masks(sentence_with_mask, self.mask_token)
        if masks != 1:
            raise ValueError(
                f"expected exactly one {self.mask_token!r} in the input, found {masks}"
            )
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        predictions = self._predict(sentence_with_mask, k)
        predictions = sorted(predictions, key=lambda p: -p.probability)
        return predictions[:k]


class SerializedBackend:
    """Wraps a backend that is not safe for concurrent calls so every call
    holds a lock."""

    def __init__(self, backend):
        self._backend = backend
        self._lock = threading.Lock()
        self.concurrency_safe = True

    def __getattr__(self, name):
        attr = getattr(self._backend, name)
        if not callable(attr):
            return attr

        def locked(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return locked


def thread_safe(backend):
    if backend is None or getattr(backend, "concurrency_safe", False):
        return backend
    return SerializedBackend(backend)
