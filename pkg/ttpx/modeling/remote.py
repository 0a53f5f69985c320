import os

import numpy as np
import requests
from tenacity import (
    retry,
    retry_if_exception,
    retry_if_not_exception_type,
    stop_after_attempt,
    wait_random_exponential,
)

from ttpx.errors import BackendError
from ttpx.modeling.backends import EmbeddingBackend, MaskedLMBackend, MaskedPrediction
from ttpx.modeling.registry import EMBEDDING, MLM, BackendRegistry

DEFAULT_TIMEOUT = 30.0


def is_transient_error(exception) -> bool:
    if isinstance(exception, (requests.ConnectionError, requests.Timeout)):
        return True
    if isinstance(exception, requests.HTTPError) and exception.response is not None:
        status = exception.response.status_code
        return status == 429 or status >= 500
    return False


def retry_on_transient_error(func, multiplier=1, max_wait=40, max_attempts=5):
    """Executes `func` with retries on connection errors, timeouts, HTTP 429
    and 5xx responses. Never retries on KeyboardInterrupt."""
    retry_function = retry(
        retry=(
            retry_if_not_exception_type(KeyboardInterrupt)
            & retry_if_exception(is_transient_error)
        ),
        wait=wait_random_exponential(multiplier=multiplier, max=max_wait),
        stop=stop_after_attempt(max_attempts),
        reraise=True,
    )
    return retry_function(func)


class RemoteClient:
    """JSON-over-HTTP client shared by the remote backends."""

    def __init__(
        self,
        base_url: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_attempts: int = 5,
        session: requests.Session | None = None,
        retry_multiplier: float = 1,
    ):
        base_url = base_url or os.environ.get("TTPX_REMOTE_URL")
        if not base_url:
            raise BackendError(
                "Remote backend needs a base URL (argument or TTPX_REMOTE_URL)."
            )
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.retry_multiplier = retry_multiplier
        self.session = session or requests.Session()

    def post(self, route: str, payload: dict) -> dict:
        url = f"{self.base_url}{route}"

        def call():
            response = self.session.post(url, json=payload, timeout=self.timeout)
            response.raise_for_status()
            return response.json()

        try:
            return retry_on_transient_error(
                call, multiplier=self.retry_multiplier, max_attempts=self.max_attempts
            )()
        except (requests.RequestException, ValueError) as e:
            raise BackendError(f"Remote call to {url} failed: {e}", checkpoint=self.base_url)


@BackendRegistry.register("remote", kind=EMBEDDING)
class RemoteEmbedder(EmbeddingBackend):
    """`POST /embed {"text": ...}` -> `{"vector": [...]}`."""

    concurrency_safe = True

    def __init__(
        self,
        base_url: str | None = None,
        dimension: int = 768,
        max_tokens: int = 256,
        timeout: float = DEFAULT_TIMEOUT,
        client: RemoteClient | None = None,
    ):
        super().__init__(max_tokens=max_tokens)
        self.client = client or RemoteClient(base_url, timeout=timeout)
        self.dimension = dimension

    @property
    def reference(self) -> str:
        return f"remote:{self.client.base_url}"

    def _embed(self, sentence: str) -> np.ndarray:
        body = self.client.post("/embed", {"text": sentence})
        if "vector" not in body:
            raise BackendError("Remote /embed response has no `vector` field.")
        return np.asarray(body["vector"], dtype=np.float64)

    def options(self) -> dict:
        return {
            **super().options(),
            "base_url": self.client.base_url,
            "dimension": self.dimension,
            "timeout": self.client.timeout,
        }


@BackendRegistry.register("remote", kind=MLM)
class RemoteMaskedLM(MaskedLMBackend):
    """`POST /mlm {"text": ..., "k": ...}` ->
    `{"candidates": [{"word": ..., "probability": ...}, ...]}`."""

    concurrency_safe = True

    def __init__(
        self,
        base_url: str | None = None,
        mask_token: str = "<mask>",
        timeout: float = DEFAULT_TIMEOUT,
        client: RemoteClient | None = None,
    ):
        super().__init__(mask_token=mask_token)
        self.client = client or RemoteClient(base_url, timeout=timeout)

    def _predict(self, sentence_with_mask: str, k: int) -> list[MaskedPrediction]:
        body = self.client.post("/mlm", {"text": sentence_with_mask, "k": k})
        try:
            return [
                MaskedPrediction(str(c["word"]), float(c["probability"]))
                for c in body["candidates"]
            ]
        except (KeyError, TypeError) as e:
            raise BackendError(f"Malformed /mlm response: {e}")
