from unittest.mock import MagicMock

import numpy as np
import pytest
import requests

from ttpx.errors import BackendError
from ttpx.modeling.remote import (
    RemoteClient,
    RemoteEmbedder,
    RemoteMaskedLM,
    is_transient_error,
    retry_on_transient_error,
)


def _response(status=200, body=None):
    response = MagicMock()
    response.status_code = status
    response.json.return_value = body if body is not None else {}
    if status >= 400:
        error = requests.HTTPError(f"{status} error")
        error.response = response
        response.raise_for_status.side_effect = error
    return response


def _client(*responses, max_attempts=5):
    session = MagicMock()
    session.post.side_effect = list(responses)
    client = RemoteClient("http://models.local/", session=session, max_attempts=max_attempts, retry_multiplier=0)
    return client, session


def test_is_transient_error():
    assert is_transient_error(requests.ConnectionError())
    assert is_transient_error(requests.Timeout())
    assert is_transient_error(_response(503).raise_for_status.side_effect)
    assert is_transient_error(_response(429).raise_for_status.side_effect)
    assert not is_transient_error(_response(400).raise_for_status.side_effect)
    assert not is_transient_error(ValueError())


def test_retry_on_transient_error_retries_then_succeeds():
    calls = []

    def flaky():
        calls.append(1)
        if len(calls) < 3:
            raise requests.ConnectionError("down")
        return "ok"

    assert retry_on_transient_error(flaky, multiplier=0)() == "ok"
    assert len(calls) == 3


def test_retry_on_transient_error_does_not_retry_keyboard_interrupt():
    func = MagicMock(side_effect=KeyboardInterrupt())
    with pytest.raises(KeyboardInterrupt):
        retry_on_transient_error(func, multiplier=0)()
    assert func.call_count == 1


def test_client_requires_url(monkeypatch):
    monkeypatch.delenv("TTPX_REMOTE_URL", raising=False)
    with pytest.raises(BackendError):
        RemoteClient()
    monkeypatch.setenv("TTPX_REMOTE_URL", "http://env.local")
    assert RemoteClient(session=MagicMock()).base_url == "http://env.local"


def test_client_retries_on_503():
    client, session = _client(_response(503), _response(200, {"vector": [1.0]}))
    assert client.post("/embed", {"text": "x"}) == {"vector": [1.0]}
    assert session.post.call_count == 2
    session.post.assert_called_with("http://models.local/embed", json={"text": "x"}, timeout=30.0)


def test_client_does_not_retry_on_400():
    client, session = _client(_response(400))
    with pytest.raises(BackendError, match="/embed"):
        client.post("/embed", {"text": "x"})
    assert session.post.call_count == 1


def test_client_gives_up_after_max_attempts():
    client, session = _client(*[_response(500)] * 3, max_attempts=3)
    with pytest.raises(BackendError):
        client.post("/mlm", {"text": "x", "k": 1})
    assert session.post.call_count == 3


def test_remote_embedder():
    client, session = _client(_response(200, {"vector": [0.0, 3.0, 4.0]}))
    embedder = RemoteEmbedder(dimension=3, client=client)
    np.testing.assert_array_equal(embedder.embed("hello").values, [0.0, 3.0, 4.0])
    assert embedder.reference == "remote:http://models.local"
    assert embedder.options()["base_url"] == "http://models.local"


def test_remote_embedder_rejects_wrong_dimension():
    client, _ = _client(_response(200, {"vector": [1.0, 2.0]}))
    with pytest.raises(BackendError):
        RemoteEmbedder(dimension=3, client=client).embed("hello")


def test_remote_embedder_missing_vector():
    client, _ = _client(_response(200, {"embedding": []}))
    with pytest.raises(BackendError, match="vector"):
        RemoteEmbedder(dimension=3, client=client).embed("hello")


def test_remote_mlm():
    body = {"candidates": [{"word": "tool", "probability": 0.2}, {"word": "actor", "probability": 0.5}]}
    client, session = _client(_response(200, body))
    predictions = RemoteMaskedLM(client=client).predict_masked("the <mask> ran", 2)
    assert [p.word for p in predictions] == ["actor", "tool"]
    session.post.assert_called_once_with(
        "http://models.local/mlm", json={"text": "the <mask> ran", "k": 2}, timeout=30.0
    )


def test_remote_mlm_malformed_response():
    client, _ = _client(_response(200, {"candidates": [{"token": "x"}]}))
    with pytest.raises(BackendError, match="Malformed"):
        RemoteMaskedLM(client=client).predict_masked("the <mask>", 1)
