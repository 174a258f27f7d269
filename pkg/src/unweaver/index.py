"""Entity index: equivalence classes, incidence matrix, persistence.

Mentions whose normalized names are equal form one equivalence class. A
class keeps the surface form of its first mention, the sorted set of chunk
ids it appears in, and the newline-joined descriptions of its mentions in
aggregation order. The chunk/class incidence matrix C has C[k, s] = 1 when
class s has a mention in chunk k.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Chunk, Document, SegmentConfig, segment_corpus
from .embedding import EmbedConfig, embed
from .errors import ChunkIdOutOfRange, IndexEmpty, IoError, SchemaVersionMismatch
from .extraction import EntityMention, ExtractorConfig, extract_all
from .gateway import ModelGateway, TokenUsage

log = logging.getLogger("unweaver.index")

SCHEMA_VERSION = 1

_WS_RE = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Casefold and collapse runs of whitespace to single spaces."""
    return _WS_RE.sub(" ", name.strip()).casefold()


@dataclass(frozen=True)
class EquivalenceClass:
    class_id: int
    name: str
    normalized_name: str
    chunk_ids: tuple[int, ...]
    description: str


@dataclass(frozen=True)
class IncidenceMatrix:
    matrix: np.ndarray  # (n_chunks, n_classes) of {0.0, 1.0}

    @property
    def n_chunks(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[1]

    def classes_in_chunk(self, chunk_id: int) -> list[int]:
        return [int(s) for s in np.nonzero(self.matrix[chunk_id])[0]]

    def chunks_with_class(self, class_id: int) -> list[int]:
        return [int(k) for k in np.nonzero(self.matrix[:, class_id])[0]]


@dataclass(frozen=True)
class IndexConfig:
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)


@dataclass
class Index:
    config: IndexConfig
    chunks: list[Chunk]
    classes: list[EquivalenceClass]
    embeddings: np.ndarray  # (dim, n_classes), column s embeds class s
    token_usage: TokenUsage = field(default_factory=TokenUsage)

    @property
    def n_chunks(self) -> int:
        return len(self.chunks)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def incidence(self) -> IncidenceMatrix:
        return build_incidence(self.classes, self.n_chunks)


def build_classes(mentions: list[EntityMention]) -> list[EquivalenceClass]:
    """Group mentions into classes by normalized-name equality.

    Class ids follow first appearance in the mention sequence; descriptions
    concatenate mention descriptions in that same order.
    """
    order: list[str] = []
    surfaces: dict[str, str] = {}
    chunk_sets: dict[str, set[int]] = {}
    descriptions: dict[str, list[str]] = {}
    for mention in mentions:
        key = normalize_name(mention.name)
        if not key:
            continue
        if key not in surfaces:
            order.append(key)
            surfaces[key] = mention.name
            chunk_sets[key] = set()
            descriptions[key] = []
        chunk_sets[key].add(mention.chunk_id)
        descriptions[key].append(mention.description)
    return [
        EquivalenceClass(
            class_id=class_id,
            name=surfaces[key],
            normalized_name=key,
            chunk_ids=tuple(sorted(chunk_sets[key])),
            description="\n".join(descriptions[key]),
        )
        for class_id, key in enumerate(order)
    ]


def build_incidence(classes: list[EquivalenceClass], n_chunks: int) -> IncidenceMatrix:
    matrix = np.zeros((n_chunks, len(classes)), dtype=np.float64)
    for cls in classes:
        for chunk_id in cls.chunk_ids:
            if not 0 <= chunk_id < n_chunks:
                raise ChunkIdOutOfRange(
                    f"class {cls.class_id} references chunk {chunk_id}, "
                    f"corpus has {n_chunks} chunks"
                )
            matrix[chunk_id, cls.class_id] = 1.0
    return IncidenceMatrix(matrix)


def build_index(
    documents: list[Document],
    config: IndexConfig | None = None,
    gateway: ModelGateway | None = None,
) -> Index:
    """Segment, extract, classify and embed a document collection."""
    config = config or IndexConfig()
    usage = gateway.usage if gateway is not None else TokenUsage()
    chunks = segment_corpus(documents, config.segment)
    mentions = extract_all(chunks, config.extractor, gateway)
    classes = build_classes(mentions)
    if not classes:
        raise IndexEmpty("no entity classes extracted from the corpus")
    build_incidence(classes, len(chunks))  # validates chunk ids early
    vectors = embed([cls.description for cls in classes], config.embed, gateway, phase="index")
    embeddings = np.column_stack(vectors)
    return Index(
        config=config,
        chunks=chunks,
        classes=classes,
        embeddings=embeddings,
        token_usage=usage,
    )


def _config_to_dict(config: IndexConfig) -> dict:
    return {
        "segment": dataclasses.asdict(config.segment),
        "extractor": dataclasses.asdict(config.extractor),
        "embed": dataclasses.asdict(config.embed),
    }


def _config_from_dict(data: dict) -> IndexConfig:
    return IndexConfig(
        segment=SegmentConfig(**data.get("segment", {})),
        extractor=ExtractorConfig(**data.get("extractor", {})),
        embed=EmbedConfig(**data.get("embed", {})),
    )


def save_index(index: Index, path: str | Path) -> None:
    """Write the index as JSON. Incidence is derived, so it is not stored."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_to_dict(index.config),
        "chunks": [dataclasses.asdict(chunk) for chunk in index.chunks],
        "classes": [
            {
                "class_id": cls.class_id,
                "name": cls.name,
                "normalized_name": cls.normalized_name,
                "chunk_ids": list(cls.chunk_ids),
                "description": cls.description,
            }
            for cls in index.classes
        ],
        "embeddings": {
            "dim": int(index.embeddings.shape[0]),
            "data": [
                [float(v) for v in index.embeddings[:, s]]
                for s in range(index.embeddings.shape[1])
            ],
        },
        "token_usage": index.token_usage.as_dict(),
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            json.dump(payload, handle, ensure_ascii=False)
    except OSError as exc:
        raise IoError(f"cannot write index to {path}: {exc}") from exc


def load_index(path: str | Path) -> Index:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read index from {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoError(f"index file {path} is not valid JSON: {exc}") from exc

    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"index file {path} has schema_version={version!r}, expected {SCHEMA_VERSION}"
        )

    config = _config_from_dict(payload.get("config", {}))
    chunks = [Chunk(**row) for row in payload["chunks"]]
    classes = [
        EquivalenceClass(
            class_id=row["class_id"],
            name=row["name"],
            normalized_name=row["normalized_name"],
            chunk_ids=tuple(row["chunk_ids"]),
            description=row["description"],
        )
        for row in payload["classes"]
    ]
    dim = payload["embeddings"]["dim"]
    data = payload["embeddings"]["data"]
    if data:
        embeddings = np.array(data, dtype=np.float64).T
    else:
        embeddings = np.zeros((dim, 0), dtype=np.float64)
    if embeddings.shape[0] != dim:
        raise IoError(f"index file {path} embedding rows disagree with dim={dim}")
    index = Index(
        config=config,
        chunks=chunks,
        classes=classes,
        embeddings=embeddings,
        token_usage=TokenUsage.from_dict(payload.get("token_usage", {})),
    )
    build_incidence(classes, len(chunks))  # fail fast on corrupt chunk ids
    return index
