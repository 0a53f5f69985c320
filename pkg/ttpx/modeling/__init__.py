from ttpx.modeling.artifact import load_artifact, resolve_model_path, save_artifact
from ttpx.modeling.backends import (
    EmbeddingBackend,
    EmbeddingVector,
    MaskedLMBackend,
    MaskedPrediction,
    SerializedBackend,
    thread_safe,
)
from ttpx.modeling.classifier import ClassDistribution, ClassifierArtifact, classify, softmax
from ttpx.modeling.pretrained import (
    SentenceTransformerEmbedder,
    TransformerEncoder,
    TransformerMaskedLM,
)
from ttpx.modeling.registry import EMBEDDING, MLM, BackendRegistry
from ttpx.modeling.remote import RemoteEmbedder, RemoteMaskedLM
from ttpx.modeling.stub import HashingEmbedder, StubMaskedLM
from ttpx.modeling.training import TrainingConfig, fine_tune


def embed(sentence: str, backend: EmbeddingBackend) -> EmbeddingVector:
    return backend.embed(sentence)


def predict_masked(sentence_with_mask: str, k: int, backend: MaskedLMBackend) -> list[MaskedPrediction]:
    return backend.predict_masked(sentence_with_mask, k)
