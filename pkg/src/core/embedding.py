# src/core/embedding.py - Dense text embedders (hermetic token-hash default, optional HTTP provider)

import hashlib
import logging
import re
from typing import Any, Protocol

import httpx
import numpy as np

from ..models.retrieval import EmbeddingConfig
from .errors import EmbeddingError

logger = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"\w+")
DEFAULT_DIMENSION = 256


def tokenize(text: str) -> list[str]:
    """Unicode word segmentation after case-folding; no stemming."""
    return TOKEN_PATTERN.findall(text.casefold())


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_many(self, texts: list[str]) -> np.ndarray: ...


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    return vector / norm


class HashingEmbedder:
    """Bag of token hashes projected onto a fixed dimension, L2-normalized. Order-invariant."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        self.dimension = dimension

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=np.float64)
        tokens = tokenize(text)
        if not tokens:
            vector[0] = 1.0  # zero-text sentinel
            return vector
        for token in tokens:
            vector[self._bucket(token)] += 1.0
        return _unit(vector)

    def embed_many(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed(t) for t in texts])


class HttpEmbedder:
    """Posts a batch of texts to an embedding endpoint; accepts OpenAI-style or bare vector replies."""

    def __init__(self, endpoint: str, dimension: int, timeout: float, model: str | None = None,
                 api_key: str | None = None, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self.dimension = dimension
        self.timeout = timeout
        self.model = model
        self.api_key = api_key
        self.transport = transport

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def _vectors(self, body: Any) -> np.ndarray:
        try:
            if isinstance(body, dict) and "data" in body:
                vectors = [item["embedding"] for item in body["data"]]
            elif isinstance(body, dict) and "embeddings" in body:
                vectors = body["embeddings"]
            else:
                vectors = body
            return np.asarray(vectors, dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            logger.warning(f"Embedding Request to {self.endpoint} returned a malformed body: {e!r}")
            raise EmbeddingError(f"Embedding provider returned a malformed body: {e!r}", {"endpoint": self.endpoint})

    def embed_many(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        payload = {"input": texts}
        if self.model:
            payload["model"] = self.model
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
                response = client.post(self.endpoint, json=payload, headers=headers)
                response.raise_for_status()
                body = response.json()
        except httpx.HTTPError as e:
            logger.warning(f"Embedding Request failed against {self.endpoint}: {e}")
            raise EmbeddingError(f"Embedding provider failed: {e}", {"endpoint": self.endpoint})
        except ValueError as e:
            raise EmbeddingError(f"Embedding provider returned invalid JSON: {e}", {"endpoint": self.endpoint})

        matrix = self._vectors(body)
        if matrix.shape != (len(texts), self.dimension):
            raise EmbeddingError(
                f"Embedding provider returned shape {matrix.shape}, expected ({len(texts)}, {self.dimension})",
                {"endpoint": self.endpoint},
            )
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise EmbeddingError("Embedding provider returned a zero vector", {"endpoint": self.endpoint})
        return matrix / norms


def create_embedder(config: EmbeddingConfig, api_key: str | None = None) -> Embedder:
    if config.provider == "http":
        if not config.endpoint:
            raise EmbeddingError("HTTP embedding provider needs an endpoint")
        return HttpEmbedder(config.endpoint, config.dimension, config.timeout, config.model, api_key)
    return HashingEmbedder(config.dimension)
