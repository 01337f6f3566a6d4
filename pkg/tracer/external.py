"""Bridge to an embedding network running outside this process."""

import logging
import shlex
import subprocess
from typing import Optional

import httpx
import numpy as np

from tracer.cache import EmbeddingCache
from tracer.errors import ConfigurationError, EmbedderUnavailableError, ProtocolError
from tracer.loss import DEFAULT_EMBEDDING_DIM
from tracer.temporal import TemporalSequence
from tracer.wire import decode_reply, encode_request

logger = logging.getLogger(__name__)

COMMAND_PREFIX = "cmd:"


class ExternalEmbedder:
    """Sends temporal sequences to an external embedder and reads back fields."""

    def __init__(
        self,
        endpoint: str,
        dim: int = DEFAULT_EMBEDDING_DIM,
        timeout: float = 30.0,
        cache: Optional[EmbeddingCache] = None,
        client: Optional[httpx.Client] = None,
    ):
        """
        Initialize the embedder.

        Args:
            endpoint: ``http(s)://`` URL receiving POSTed requests, or
                ``cmd:<command line>`` run once per request with the request
                on stdin and the reply on stdout
            dim: Embedding dimension the endpoint is expected to return
            timeout: Seconds to wait for one reply
            cache: Optional reply cache
            client: HTTP client to use instead of a private one
        """
        self.endpoint = endpoint
        self.dim = dim
        self.timeout = timeout
        self.cache = cache
        if endpoint.startswith(("http://", "https://")):
            self.command = None
            self.client = client or httpx.Client(timeout=timeout)
        elif endpoint.startswith(COMMAND_PREFIX):
            self.command = shlex.split(endpoint[len(COMMAND_PREFIX):])
            if not self.command:
                raise ConfigurationError("Empty embedder command")
            self.client = None
        else:
            raise ConfigurationError(
                f"Unsupported embedder endpoint {endpoint!r}; use http(s):// or {COMMAND_PREFIX}"
            )

    def _post(self, request: bytes) -> bytes:
        try:
            response = self.client.post(
                self.endpoint,
                content=request,
                headers={"Content-Type": "application/octet-stream"},
                timeout=self.timeout,
            )
            response.raise_for_status()
            return response.content
        except httpx.HTTPError as e:
            logger.error(f"Embedder request to {self.endpoint} failed: {e}")
            raise EmbedderUnavailableError(f"Embedder at {self.endpoint} failed: {e}") from e

    def _run(self, request: bytes) -> bytes:
        try:
            completed = subprocess.run(
                self.command,
                input=request,
                capture_output=True,
                timeout=self.timeout,
                check=True,
            )
            return completed.stdout
        except subprocess.CalledProcessError as e:
            stderr = (e.stderr or b"").decode(errors="replace").strip()
            logger.error(f"Embedder command exited with {e.returncode}: {stderr[:200]}")
            raise EmbedderUnavailableError(f"Embedder command exited with {e.returncode}") from e
        except (OSError, subprocess.TimeoutExpired) as e:
            logger.error(f"Embedder command {self.command[0]} failed: {e}")
            raise EmbedderUnavailableError(f"Embedder command failed: {e}") from e

    def embed(self, sequence: TemporalSequence, semantic_mask: np.ndarray) -> np.ndarray:
        request = encode_request(sequence, semantic_mask)

        cached = self.cache.get(self.endpoint, request) if self.cache else None
        if cached is not None:
            reply = cached.reply
        else:
            reply = self._run(request) if self.command else self._post(request)

        field = decode_reply(reply)
        expected = sequence.base.pixels.shape[:2] + (self.dim,)
        if field.shape != expected:
            raise ProtocolError(f"Reply field {field.shape} does not match expected {expected}")

        if self.cache and cached is None:
            self.cache.set(self.endpoint, request, reply)
        return field

    def close(self):
        if self.client is not None:
            self.client.close()
