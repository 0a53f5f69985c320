import os
from types import SimpleNamespace
from unittest.mock import MagicMock, patch

import numpy as np
import pytest
import torch

from ttpx.errors import BackendError
from ttpx.modeling.pretrained import (
    DEFAULT_ENCODER,
    SentenceTransformerEmbedder,
    TransformerEncoder,
    TransformerMaskedLM,
)


class Encoded(dict):
    def to(self, device):
        return self


def test_default_checkpoint(monkeypatch):
    monkeypatch.delenv("TTPX_PRETRAINED_ENCODER", raising=False)
    assert TransformerEncoder().checkpoint == DEFAULT_ENCODER
    monkeypatch.setenv("TTPX_PRETRAINED_ENCODER", "/models/local-encoder")
    assert TransformerEncoder().reference == "/models/local-encoder"
    assert TransformerEncoder("explicit").checkpoint == "explicit"


def test_unknown_pooling():
    with pytest.raises(ValueError):
        TransformerEncoder("x", pooling="max")


def test_missing_checkpoint_is_a_backend_error():
    with patch("transformers.AutoTokenizer.from_pretrained", side_effect=OSError("not found")):
        with pytest.raises(BackendError) as exc:
            TransformerEncoder("no/such-model").dimension
    assert exc.value.context["checkpoint"] == "no/such-model"


def _encoder(pooling, max_tokens=8):
    encoder = TransformerEncoder("mock", pooling=pooling, max_tokens=max_tokens, device="cpu")
    hidden = torch.tensor(
        [
            [[1.0, 0.0], [3.0, 0.0], [5.0, 0.0]],
            [[2.0, 2.0], [4.0, 4.0], [100.0, 100.0]],
        ]
    )
    tokenizer = MagicMock(
        side_effect=[
            Encoded(
                input_ids=torch.tensor([[1, 2, 3], [1, 2, 0]]),
                attention_mask=torch.tensor([[1, 1, 1], [1, 1, 0]]),
                length=torch.tensor([3, 2]),
            ),
            {"length": [3, 2]},
        ]
    )
    model = MagicMock(return_value=SimpleNamespace(last_hidden_state=hidden))
    model.config.hidden_size = 2
    encoder._tokenizer, encoder._model, encoder.device = tokenizer, model, "cpu"
    return encoder


def test_cls_pooling():
    features = _encoder("cls").features(["a b c", "a b"])
    np.testing.assert_allclose(features.numpy(), [[1.0, 0.0], [2.0, 2.0]])


def test_mean_pooling_ignores_padding():
    features = _encoder("mean").features(["a b c", "a b"])
    np.testing.assert_allclose(features.numpy(), [[3.0, 0.0], [3.0, 3.0]])


def test_truncation_is_counted():
    encoder = _encoder("cls", max_tokens=2)
    encoder.features(["a b c", "a b"])
    assert encoder.truncated_count == 1


def test_embed_batch_returns_float64():
    encoder = _encoder("mean")
    batch = encoder.embed_batch(["a b c", "a b"])
    assert batch.dtype == np.float64
    assert batch.shape == (2, 2)
    assert encoder.options() == {"max_tokens": 8, "checkpoint": "mock", "pooling": "mean"}


def _masked_lm():
    mlm = TransformerMaskedLM("mock", device="cpu")
    tokens = {5: ("Ġmalware", " malware"), 6: ("ware", "ware"), 7: ("Ġ,", " ,"), 8: ("Ġtool", " tool"), 9: ("Ġtwo", " two words")}
    tokenizer = MagicMock(
        return_value=Encoded(input_ids=torch.tensor([[0, 11, 4, 12, 2]]), attention_mask=torch.ones(1, 5))
    )
    tokenizer.mask_token = "<mask>"
    tokenizer.mask_token_id = 4
    tokenizer.convert_ids_to_tokens.side_effect = lambda i: tokens.get(i, ("Ġx",))[0]
    tokenizer.decode.side_effect = lambda ids: tokens.get(ids[0], ("", ""))[1]

    logits = torch.full((1, 5, 10), -10.0)
    logits[0, 2, 6] = 5.0
    logits[0, 2, 5] = 4.0
    logits[0, 2, 7] = 3.0
    logits[0, 2, 9] = 2.0
    logits[0, 2, 8] = 1.0
    model = MagicMock(return_value=SimpleNamespace(logits=logits))
    mlm._tokenizer, mlm._model, mlm.device = tokenizer, model, "cpu"
    return mlm


def test_masked_lm_keeps_whole_words_only():
    predictions = _masked_lm().predict_masked("the <mask> ran", 2)
    assert [p.word for p in predictions] == ["malware", "tool"]
    assert predictions[0].probability > predictions[1].probability


def test_masked_lm_lost_mask():
    mlm = _masked_lm()
    mlm._tokenizer.return_value = Encoded(input_ids=torch.tensor([[0, 11, 2]]))
    with pytest.raises(BackendError, match="mask token"):
        mlm.predict_masked("the <mask> ran", 2)


def test_sentence_transformer_embedder():
    embedder = SentenceTransformerEmbedder("mock-model")
    embedder._model = MagicMock()
    embedder._model.encode.side_effect = lambda s: np.ones(3) if isinstance(s, str) else np.ones((len(s), 3))
    embedder._model.get_sentence_embedding_dimension.return_value = 3
    assert embedder.embed("hello").dimension == 3
    assert embedder.embed_batch(["a", "b"]).shape == (2, 3)
    assert embedder.options()["model_name"] == "mock-model"


@pytest.mark.integration
@pytest.mark.skipif(not os.environ.get("TTPX_PRETRAINED_ENCODER"), reason="TTPX_PRETRAINED_ENCODER not set")
def test_pretrained_encoder_end_to_end():
    encoder = TransformerEncoder(pooling="mean")
    vectors = encoder.embed_batch(["The loader runs PowerShell.", "Victims opened a phishing email."])
    assert vectors.shape == (2, encoder.dimension)
    assert np.all(np.isfinite(vectors))

    mlm = TransformerMaskedLM()
    predictions = mlm.predict_masked("The attacker used <mask> to run commands.", 5)
    assert 0 < len(predictions) <= 5
