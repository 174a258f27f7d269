"""Per-chunk entity extraction with pluggable backends.

The stub backend is pure string processing so offline runs are fully
deterministic: entity names are maximal runs of capitalized words (each at
least two characters), a run breaks at non-qualifying words and at trailing
punctuation, and a sentence-initial stopword is dropped from the front of
its run. A mention's description is the concatenation of the chunk's
sentences that contain the name (case-insensitive); if none matches the
joined run text, the run's own sentence is used.

The llm backend asks the gateway for a JSON array of
{"name": ..., "description": ...} objects, retrying once with a repair
prompt before raising ``MalformedOutput``.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .corpus import Chunk
from .errors import BackendError, MalformedOutput
from .gateway import (
    EXTRACTION_SYSTEM_PROMPT,
    SHORTEN_SYSTEM_PROMPT,
    ChatRequest,
    ModelGateway,
)

log = logging.getLogger("unweaver.extraction")

EXTRACT_BACKENDS = ("stub", "llm")

MAX_NAME_CHARS = 256
ELLIPSIS = "…"

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_EDGE_PUNCT = ".,;:!?\"'()"

STOPWORDS = frozenset(
    """
    the a an and or but if then this that these those it its he she they we
    you his her their our your my is are was were be been am do does did not
    no yes in on at of for to from with by as so such there here when where
    which who whom what why how
    """.split()
)


@dataclass(frozen=True)
class EntityMention:
    name: str
    description: str
    chunk_id: int


@dataclass(frozen=True)
class ExtractorConfig:
    backend: str = "stub"
    shorten_threshold: int = 1024
    max_mentions_per_chunk: int | None = None
    max_concurrent_requests: int = 4

    def __post_init__(self):
        if self.backend not in EXTRACT_BACKENDS:
            raise ValueError(f"backend must be one of {EXTRACT_BACKENDS}")
        if self.shorten_threshold < 64:
            raise ValueError("shorten_threshold must be >= 64")
        if self.max_mentions_per_chunk is not None and self.max_mentions_per_chunk < 1:
            raise ValueError("max_mentions_per_chunk must be >= 1 when set")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_RE.split(text.strip()) if s.strip()]


def shorten(description: str, threshold: int, gateway: ModelGateway | None = None) -> str:
    """Bound a description to ``threshold`` characters.

    Text at or under the threshold is returned unchanged. Offline, the text
    is cut at the last whitespace before the threshold (hard cut when there
    is none) and an ellipsis is appended. With a gateway, an LLM rewrite is
    attempted first and truncation is the fallback, so this never raises.
    """
    if threshold < 64:
        raise ValueError("threshold must be >= 64")
    if len(description) <= threshold:
        return description
    if gateway is not None:
        try:
            response = gateway.chat(
                ChatRequest(
                    model=gateway.chat_model,
                    messages=[
                        ("system", SHORTEN_SYSTEM_PROMPT.format(limit=threshold)),
                        ("user", description),
                    ],
                ),
                phase="index",
            )
            rewritten = response.content.strip()
            if rewritten and len(rewritten) <= threshold:
                return rewritten
            description = rewritten or description
        except BackendError as exc:
            log.warning("LLM shortening failed (%s); falling back to truncation", exc)
    if len(description) <= threshold:
        return description
    head = description[: threshold - 1]
    cut = max(head.rfind(c) for c in (" ", "\t", "\n"))
    if cut > 0:
        head = head[:cut].rstrip()
    return head + ELLIPSIS


def _stub_candidates(sentence: str) -> list[str]:
    """Capitalized-run entity candidates from one sentence, in order."""
    names: list[str] = []
    run: list[str] = []
    run_start = -1

    def close() -> None:
        nonlocal run, run_start
        if run:
            words = run
            if run_start == 0 and words[0].casefold() in STOPWORDS:
                words = words[1:]
            if words and not (len(words) == 1 and words[0].casefold() in STOPWORDS):
                names.append(" ".join(words))
        run = []
        run_start = -1

    for position, raw in enumerate(sentence.split()):
        core = raw.strip(_EDGE_PUNCT)
        if len(core) >= 2 and core[0].isupper():
            if not run:
                run_start = position
            run.append(core)
            if raw.rstrip(_EDGE_PUNCT) != raw:
                close()  # trailing punctuation ends the run
        else:
            close()
    close()
    return names


def _stub_extract(chunk: Chunk) -> list[tuple[str, str]]:
    sentences = split_sentences(chunk.text)
    seen: dict[str, str] = {}
    for sentence in sentences:
        for name in _stub_candidates(sentence):
            if name in seen:
                continue
            folded = name.casefold()
            matches = [s for s in sentences if folded in s.casefold()]
            seen[name] = " ".join(matches) if matches else sentence
    return list(seen.items())


def _parse_entity_json(text: str) -> list[tuple[str, str]]:
    candidates = [text]
    start, end = text.find("["), text.rfind("]")
    if start != -1 and end > start:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            data = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if not isinstance(data, list):
            continue
        pairs: list[tuple[str, str]] = []
        ok = True
        for item in data:
            if not isinstance(item, dict) or not isinstance(item.get("name"), str):
                ok = False
                break
            description = item.get("description", "")
            pairs.append((item["name"], description if isinstance(description, str) else ""))
        if ok:
            return pairs
    raise MalformedOutput("extractor response is not a JSON array of name/description objects")


def _llm_extract(chunk: Chunk, gateway: ModelGateway) -> list[tuple[str, str]]:
    request = ChatRequest(
        model=gateway.chat_model,
        messages=[("system", EXTRACTION_SYSTEM_PROMPT), ("user", chunk.text)],
    )
    response = gateway.chat(request, phase="index")
    try:
        return _parse_entity_json(response.content)
    except MalformedOutput:
        log.warning("unparseable extraction for chunk %d; retrying once", chunk.chunk_id)
    repair = ChatRequest(
        model=gateway.chat_model,
        messages=[
            ("system", EXTRACTION_SYSTEM_PROMPT),
            (
                "user",
                "The previous reply could not be parsed. Respond with only the "
                "JSON array for this chunk:\n\n" + chunk.text,
            ),
        ],
    )
    return _parse_entity_json(gateway.chat(repair, phase="index").content)


def extract(
    chunk: Chunk,
    cfg: ExtractorConfig,
    gateway: ModelGateway | None = None,
) -> list[EntityMention]:
    """Extract (name, description) mentions from one chunk.

    Duplicate names within the chunk are merged by concatenating their
    descriptions, descriptions are bounded by ``cfg.shorten_threshold``,
    and whitespace-only names are dropped.
    """
    if cfg.backend == "stub":
        raw_pairs = _stub_extract(chunk)
    else:
        if gateway is None:
            raise ValueError("llm backend requires a ModelGateway")
        raw_pairs = _llm_extract(chunk, gateway)

    merged: dict[str, str] = {}
    for name, description in raw_pairs:
        name = name.strip()[:MAX_NAME_CHARS].strip()
        if not name:
            continue
        description = description.strip() or name
        if name in merged:
            merged[name] = merged[name] + "\n" + description
        else:
            merged[name] = description

    mentions = [
        EntityMention(
            name=name,
            description=shorten(description, cfg.shorten_threshold),
            chunk_id=chunk.chunk_id,
        )
        for name, description in merged.items()
    ]
    if cfg.max_mentions_per_chunk is not None:
        mentions = mentions[: cfg.max_mentions_per_chunk]
    return mentions


def extract_all(
    chunks: list[Chunk],
    cfg: ExtractorConfig,
    gateway: ModelGateway | None = None,
) -> list[EntityMention]:
    """Extract from every chunk, aggregating strictly in chunk_id order.

    The llm backend fans out across chunks with bounded parallelism; the
    result order is independent of completion order.
    """
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    if cfg.backend == "stub":
        per_chunk = [extract(chunk, cfg, gateway) for chunk in ordered]
    else:
        workers = min(cfg.max_concurrent_requests, max(1, len(ordered)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(lambda c: extract(c, cfg, gateway), ordered))
    return [mention for mentions in per_chunk for mention in mentions]
