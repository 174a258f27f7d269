"""Text embedding backends.

Vectors are float64 numpy arrays of a fixed dimension. The stub backend is
a deterministic token-hash bag: each whitespace token is bucketed by
FNV-1a-64 modulo the dimension and the count vector is L2-normalized, so
identical text embeds identically on every platform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BackendError, DimensionMismatch
from .gateway import EmbedRequest, ModelGateway

log = logging.getLogger("unweaver.embedding")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1

EMBED_BACKENDS = ("stub", "api")


@dataclass(frozen=True)
class EmbedConfig:
    backend: str = "stub"
    dim: int = 64
    model: str = "default"

    def __post_init__(self):
        if self.backend not in EMBED_BACKENDS:
            raise ValueError(f"backend must be one of {EMBED_BACKENDS}")
        if self.backend == "stub" and self.dim < 2:
            raise ValueError("stub backend requires dim >= 2")
        if self.dim < 1:
            raise ValueError("dim must be positive")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _U64
    return h


def stub_vector(text: str, dim: int) -> np.ndarray:
    """Token-hash bag embedding; zero vector (with a warning) for empty text."""
    counts = np.zeros(dim, dtype=np.float64)
    for token in text.split():
        counts[fnv1a_64(token.encode("utf-8")) % dim] += 1.0
    norm = float(np.linalg.norm(counts))
    if norm == 0.0:
        log.warning("embedding empty text as the zero vector")
        return counts
    return counts / norm


def embed(
    texts: list[str],
    cfg: EmbedConfig,
    gateway: ModelGateway | None = None,
    phase: str = "index",
) -> list[np.ndarray]:
    """Embed a batch of texts, preserving order.

    The api backend posts the whole batch to the gateway and enforces the
    configured dimension on every returned vector.
    """
    if cfg.backend == "stub":
        return [stub_vector(text, cfg.dim) for text in texts]

    if gateway is None:
        raise ValueError("api backend requires a ModelGateway")
    response = gateway.embed(EmbedRequest(model=cfg.model, texts=list(texts)), phase=phase)
    vectors: list[np.ndarray] = []
    for i, values in enumerate(response.vectors):
        if len(values) != cfg.dim:
            raise DimensionMismatch(
                f"embedding {i} has dimension {len(values)}, configured {cfg.dim}"
            )
        vector = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(vector)):
            raise BackendError(f"embedding {i} contains non-finite values")
        vectors.append(vector)
    return vectors
