"""Client for an OpenAI-style embeddings endpoint.

Request: ``POST {"model": str, "input": [str]}``; response
``{"data": [{"embedding": [float]}]}``. Vectors are L2-normalized locally.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import httpx
import numpy as np

from .errors import ConfigError, InputError, ProtocolError, ServiceError
from .linalg import normalize

log = logging.getLogger(__name__)

ENV_URL = "PROTOSPACE_EMBED_URL"
ENV_KEY = "PROTOSPACE_EMBED_KEY"
ENV_MODEL = "PROTOSPACE_EMBED_MODEL"


@dataclass
class ServiceConfig:
    url: Optional[str] = None
    model: str = "default"
    api_key: Optional[str] = None
    batch_size: int = 64
    retries: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    concurrency: int = 4
    timeout: float = 60.0
    # test hooks
    transport: Optional[httpx.BaseTransport] = None
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        values = {
            "url": os.environ.get(ENV_URL),
            "api_key": os.environ.get(ENV_KEY),
            "model": os.environ.get(ENV_MODEL) or "default",
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _retryable(exc: Exception) -> bool:
    if isinstance(exc, httpx.HTTPStatusError):
        code = exc.response.status_code
        return code == 429 or code >= 500
    return isinstance(exc, httpx.TransportError)


def _post_batch(client: httpx.Client, cfg: ServiceConfig, texts: list[str]) -> list[np.ndarray]:
    headers = {"Authorization": f"Bearer {cfg.api_key}"} if cfg.api_key else {}
    attempt = 0
    while True:
        try:
            resp = client.post(cfg.url, json={"model": cfg.model, "input": texts}, headers=headers)
            resp.raise_for_status()
            break
        except (httpx.HTTPStatusError, httpx.TransportError) as exc:
            if not _retryable(exc) or attempt >= cfg.retries:
                raise ServiceError(f"embedding request failed after {attempt + 1} attempt(s): {exc}") from exc
            delay = cfg.backoff[min(attempt, len(cfg.backoff) - 1)]
            log.warning("embedding request failed (%s); retrying in %.1fs", exc, delay)
            cfg.sleep(delay)
            attempt += 1

    try:
        data = resp.json()["data"]
        vectors = [item["embedding"] for item in data]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"unexpected response body ({exc})") from None
    if len(vectors) != len(texts):
        raise ProtocolError(f"sent {len(texts)} texts, received {len(vectors)} embeddings")
    return [normalize(v) for v in vectors]


def fetch_embeddings(texts: list[str], config: ServiceConfig) -> list[np.ndarray]:
    """Embed ``texts`` in order, batching and retrying as configured."""
    if not texts:
        raise InputError("no texts to embed")
    if not config.url:
        raise ConfigError(f"no embedding endpoint configured (set {ENV_URL} or pass --endpoint)")
    batches = [texts[i : i + config.batch_size] for i in range(0, len(texts), config.batch_size)]
    with httpx.Client(timeout=config.timeout, transport=config.transport) as client:
        if config.concurrency <= 1 or len(batches) == 1:
            results = [_post_batch(client, config, b) for b in batches]
        else:
            with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
                results = list(pool.map(lambda b: _post_batch(client, config, b), batches))
    return [v for batch in results for v in batch]
