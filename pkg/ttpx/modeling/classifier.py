from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ttpx.errors import ArtifactError

if TYPE_CHECKING:
    from ttpx.modeling.backends import EmbeddingBackend
    from ttpx.modeling.training import TrainingConfig
    from ttpx.taxonomy import TechniqueRegistry

PROBABILITY_TOLERANCE = 1e-6


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


@dataclass(frozen=True)
class ClassDistribution:
    """Output of the linear head for one sentence, aligned to the registry
    layout."""

    probabilities: np.ndarray
    predicted_index: int = field(init=False)
    confidence: float = field(init=False)

    def __post_init__(self):
        probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if probabilities.ndim != 1 or probabilities.size == 0:
            raise ValueError("class distribution must be a non-empty vector")
        if np.any(probabilities < 0) or np.any(probabilities > 1 + PROBABILITY_TOLERANCE):
            raise ValueError("class probabilities must lie in [0, 1]")
        if abs(probabilities.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"class probabilities sum to {probabilities.sum()}, expected 1")
        probabilities.setflags(write=False)
        predicted_index = int(np.argmax(probabilities))
        object.__setattr__(self, "probabilities", probabilities)
        object.__setattr__(self, "predicted_index", predicted_index)
        object.__setattr__(self, "confidence", float(probabilities[predicted_index]))

    @classmethod
    def from_logits(cls, logits) -> "ClassDistribution":
        return cls(softmax(logits))


@dataclass
class ClassifierArtifact:
    """A trained linear head plus everything needed to rebuild the encoder
    it was trained over. `encoder` is the live backend, resolved on load."""

    encoder_reference: str
    backend: str
    backend_options: dict
    head_weights: np.ndarray
    head_bias: np.ndarray
    registry_version: str
    label_ids: tuple[str, ...]
    training_config: "TrainingConfig"
    metrics: list[dict] = field(default_factory=list)
    encoder_updated: bool = False
    encoder: "EmbeddingBackend | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.head_weights = np.asarray(self.head_weights, dtype=np.float32)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float32)
        self.label_ids = tuple(self.label_ids)
        m = len(self.label_ids)
        if self.head_weights.ndim != 2 or self.head_weights.shape[0] != m:
            raise ArtifactError(
                f"head weights have shape {self.head_weights.shape}, expected ({m}, dim)"
            )
        if self.head_bias.shape != (m,):
            raise ArtifactError(f"head bias has shape {self.head_bias.shape}, expected ({m},)")
        if self.encoder is not None and self.encoder.dimension != self.dimension:
            raise ArtifactError(
                f"encoder dimension {self.encoder.dimension} does not match head dimension {self.dimension}",
                encoder=self.encoder_reference,
            )

    @property
    def class_count(self) -> int:
        return len(self.label_ids)

    @property
    def dimension(self) -> int:
        return self.head_weights.shape[1]

    def logits(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        return features @ self.head_weights.astype(np.float64).T + self.head_bias.astype(np.float64)

    def label_of(self, distribution: ClassDistribution) -> str:
        return self.label_ids[distribution.predicted_index]

    def check_registry(self, registry: "TechniqueRegistry") -> None:
        if registry.version != self.registry_version or list(self.label_ids) != registry.ids:
            raise ArtifactError(
                "classifier was trained against a different taxonomy",
                artifact_registry_version=self.registry_version,
                active_registry_version=registry.version,
            )


def classify(
    sentence: str,
    artifact: ClassifierArtifact,
    registry: "TechniqueRegistry | None" = None,
) -> ClassDistribution:
    if registry is not None:
        artifact.check_registry(registry)
    if artifact.encoder is None:
        raise ArtifactError("classifier artifact has no encoder attached")
    vector = artifact.encoder.embed(sentence).values
    return ClassDistribution.from_logits(artifact.logits(vector))
