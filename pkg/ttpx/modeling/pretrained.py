import os

import numpy as np

from ttpx.errors import BackendError
from ttpx.modeling.backends import EmbeddingBackend, MaskedLMBackend, MaskedPrediction
from ttpx.modeling.registry import EMBEDDING, MLM, BackendRegistry

DEFAULT_ENCODER = "ehsanaghaei/SecureBERT"
DEFAULT_SENTENCE_EMBEDDER = "sentence-transformers/all-mpnet-base-v2"


def _checkpoint(checkpoint: str | None) -> str:
    return checkpoint or os.environ.get("TTPX_PRETRAINED_ENCODER", DEFAULT_ENCODER)


def _device(device: str | None) -> str:
    if device:
        return device
    import torch

    return "cuda" if torch.cuda.is_available() else "cpu"


@BackendRegistry.register("pretrained", kind=EMBEDDING)
class TransformerEncoder(EmbeddingBackend):
    """Domain-specific encoder loaded with transformers. The sentence vector
    is the sequence-start token embedding (`pooling="cls"`) or the
    attention-masked mean of the last hidden state (`pooling="mean"`)."""

    supports_gradients = True
    concurrency_safe = False

    def __init__(
        self,
        checkpoint: str | None = None,
        pooling: str = "cls",
        max_tokens: int = 256,
        device: str | None = None,
    ):
        super().__init__(max_tokens=max_tokens)
        if pooling not in ("cls", "mean"):
            raise ValueError(f"Unknown pooling {pooling!r}, expected 'cls' or 'mean'.")
        self.checkpoint = _checkpoint(checkpoint)
        self.pooling = pooling
        self._device_name = device
        self._model = None
        self._tokenizer = None

    def _load(self):
        if self._model is not None:
            return
        from transformers import AutoModel, AutoTokenizer

        try:
            self._tokenizer = AutoTokenizer.from_pretrained(self.checkpoint)
            self._model = AutoModel.from_pretrained(self.checkpoint)
        except OSError as e:
            raise BackendError(
                f"Encoder checkpoint `{self.checkpoint}` is not available: {e}",
                checkpoint=self.checkpoint,
            )
        self.device = _device(self._device_name)
        self._model.to(self.device)
        self._model.eval()

    @property
    def model(self):
        self._load()
        return self._model

    @property
    def tokenizer(self):
        self._load()
        return self._tokenizer

    @property
    def dimension(self) -> int:
        return self.model.config.hidden_size

    @property
    def reference(self) -> str:
        return self.checkpoint

    def features(self, sentences: list[str]):
        """Pooled sentence vectors as a torch tensor. Gradients flow when
        called outside `torch.no_grad()` with the model in train mode."""
        encoded = self.tokenizer(
            sentences,
            padding=True,
            truncation=True,
            max_length=self.max_tokens,
            return_tensors="pt",
            return_overflowing_tokens=False,
            return_length=True,
        )
        full_lengths = self.tokenizer(sentences, truncation=False, return_length=True)["length"]
        self.truncated_count += sum(1 for n in full_lengths if n > self.max_tokens)
        encoded.pop("length", None)
        encoded = {key: value.to(self.device) for key, value in encoded.items()}
        hidden = self.model(**encoded).last_hidden_state
        if self.pooling == "cls":
            return hidden[:, 0, :]
        mask = encoded["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        return (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)

    def _embed(self, sentence: str) -> np.ndarray:
        import torch

        self.model.eval()
        with torch.no_grad():
            return self.features([sentence])[0].double().cpu().numpy()

    def embed_batch(self, sentences: list[str], batch_size: int = 64) -> np.ndarray:
        import torch

        if not sentences:
            return np.zeros((0, self.dimension))
        self.model.eval()
        chunks = []
        with torch.no_grad():
            for start in range(0, len(sentences), batch_size):
                batch = sentences[start : start + batch_size]
                chunks.append(self.features(batch).double().cpu().numpy())
        return np.concatenate(chunks)

    def trainable_module(self):
        return self.model

    def save_encoder(self, directory) -> None:
        self.model.save_pretrained(directory)
        self.tokenizer.save_pretrained(directory)

    def options(self) -> dict:
        return {**super().options(), "checkpoint": self.checkpoint, "pooling": self.pooling}


@BackendRegistry.register("pretrained", kind=MLM)
class TransformerMaskedLM(MaskedLMBackend):
    """Fill-mask over whole words. Sub-word candidates (tokens that do not
    start a new word, or carry no letters) are skipped."""

    concurrency_safe = False

    def __init__(
        self,
        checkpoint: str | None = None,
        mask_token: str = "<mask>",
        device: str | None = None,
        scan_factor: int = 10,
    ):
        super().__init__(mask_token=mask_token)
        self.checkpoint = _checkpoint(checkpoint)
        self._device_name = device
        self.scan_factor = scan_factor
        self._model = None
        self._tokenizer = None

    def _load(self):
        if self._model is not None:
            return
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        try:
            self._tokenizer = AutoTokenizer.from_pretrained(self.checkpoint)
            self._model = AutoModelForMaskedLM.from_pretrained(self.checkpoint)
        except OSError as e:
            raise BackendError(
                f"MLM checkpoint `{self.checkpoint}` is not available: {e}",
                checkpoint=self.checkpoint,
            )
        self.device = _device(self._device_name)
        self._model.to(self.device)
        self._model.eval()

    def _predict(self, sentence_with_mask: str, k: int) -> list[MaskedPrediction]:
        import torch

        self._load()
        text = sentence_with_mask.replace(self.mask_token, self._tokenizer.mask_token)
        encoded = self._tokenizer(text, return_tensors="pt", truncation=True).to(self.device)
        positions = (encoded["input_ids"][0] == self._tokenizer.mask_token_id).nonzero()
        if len(positions) != 1:
            raise BackendError("mask token was lost during tokenization")
        with torch.no_grad():
            logits = self._model(**encoded).logits[0, positions[0, 0]]
        probabilities = torch.softmax(logits.float(), dim=-1)
        top = torch.topk(probabilities, k=min(k * self.scan_factor, probabilities.shape[0]))

        at_sentence_start = sentence_with_mask.lstrip().startswith(self.mask_token)
        predictions = []
        for token_id, probability in zip(top.indices.tolist(), top.values.tolist()):
            token = self._tokenizer.convert_ids_to_tokens(token_id)
            starts_word = token.startswith(("Ġ", "▁")) or at_sentence_start
            word = self._tokenizer.decode([token_id]).strip()
            if not starts_word or not word or not any(c.isalpha() for c in word):
                continue
            if " " in word:
                continue
            predictions.append(MaskedPrediction(word, float(probability)))
            if len(predictions) == k:
                break
        return predictions


@BackendRegistry.register("sentence-transformer", kind=EMBEDDING)
class SentenceTransformerEmbedder(EmbeddingBackend):
    """Sentence-embedding model used by the augmentation similarity gate."""

    concurrency_safe = False

    def __init__(self, model_name: str | None = None, max_tokens: int = 256, device: str | None = None):
        super().__init__(max_tokens=max_tokens)
        self.model_name = model_name or DEFAULT_SENTENCE_EMBEDDER
        self._device_name = device
        self._model = None

    @property
    def model(self):
        if self._model is None:
            try:
                from sentence_transformers import SentenceTransformer

                self._model = SentenceTransformer(self.model_name, device=_device(self._device_name))
            except OSError as e:
                raise BackendError(
                    f"Sentence embedder `{self.model_name}` is not available: {e}",
                    checkpoint=self.model_name,
                )
            self._model.max_seq_length = self.max_tokens
        return self._model

    @property
    def dimension(self) -> int:
        return self.model.get_sentence_embedding_dimension()

    @property
    def reference(self) -> str:
        return self.model_name

    def _embed(self, sentence: str) -> np.ndarray:
        return np.asarray(self.model.encode(sentence), dtype=np.float64)

    def embed_batch(self, sentences: list[str]) -> np.ndarray:
        if not sentences:
            return np.zeros((0, self.dimension))
        return np.asarray(self.model.encode(sentences), dtype=np.float64)

    def options(self) -> dict:
        return {**super().options(), "model_name": self.model_name}
