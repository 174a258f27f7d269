"""Document loading and sliding-window chunk segmentation.

Tokenization is a plain Unicode-whitespace split; chunk text keeps the
original substring between its first and last token so context stays
faithful to the source file.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyDocument, IoError

log = logging.getLogger("unweaver.corpus")

_TOKEN_RE = re.compile(r"\S+")

CORPUS_EXTENSIONS = (".txt", ".md")


@dataclass(frozen=True)
class Document:
    source_id: str
    text: str


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    source_id: str
    text: str
    token_count: int


@dataclass(frozen=True)
class SegmentConfig:
    target_tokens: int = 256
    overlap_tokens: int = 32

    def __post_init__(self):
        if self.target_tokens < 8:
            raise ValueError("target_tokens must be >= 8")
        if not 0 <= self.overlap_tokens < self.target_tokens:
            raise ValueError("overlap_tokens must satisfy 0 <= overlap < target")


def token_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of whitespace-delimited tokens, in document order."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def segment(doc: Document, cfg: SegmentConfig | None = None) -> list[Chunk]:
    """Split a document into overlapping chunks of at most ``target_tokens``.

    Consecutive chunks share exactly ``overlap_tokens`` tokens except
    possibly the last pair; the final chunk may be shorter than the target.
    Chunk ids are dense 0..n-1 in document order. Raises ``EmptyDocument``
    when the text is whitespace-only.
    """
    if cfg is None:
        cfg = SegmentConfig()
    spans = token_spans(doc.text)
    if not spans:
        raise EmptyDocument(f"document {doc.source_id!r} has no tokens")

    n = len(spans)
    stride = cfg.target_tokens - cfg.overlap_tokens
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + cfg.target_tokens, n)
        chunks.append(
            Chunk(
                chunk_id=len(chunks),
                source_id=doc.source_id,
                text=doc.text[spans[start][0] : spans[end - 1][1]],
                token_count=end - start,
            )
        )
        if end == n:
            break
        start += stride
    return chunks


def load_corpus(root: str | Path) -> list[Document]:
    """Read every .txt/.md file under ``root`` as UTF-8.

    Files are sorted lexicographically by relative path so chunk id
    assignment is reproducible; whitespace-only files are skipped with a
    warning. Raises ``EmptyDocument`` when nothing usable is found.
    """
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"corpus root {root} is not a directory")
    paths = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in CORPUS_EXTENSIONS),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    docs: list[Document] = []
    for path in paths:
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        if not text.strip():
            log.warning("skipping empty file %s", path)
            continue
        docs.append(Document(source_id=path.relative_to(root).as_posix(), text=text))
    if not docs:
        raise EmptyDocument(f"no non-empty .txt/.md files under {root}")
    return docs


def segment_corpus(docs: list[Document], cfg: SegmentConfig | None = None) -> list[Chunk]:
    """Segment every document and renumber chunk ids densely across the corpus."""
    chunks: list[Chunk] = []
    for doc in docs:
        for chunk in segment(doc, cfg):
            chunks.append(dataclasses.replace(chunk, chunk_id=len(chunks)))
    return chunks
