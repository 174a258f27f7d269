"""Command-line front end: index, query, answer, inspect, stats.

Settings merge as flags > environment > config file (JSON or TOML).
Results go to stdout as JSON lines; logs go to stderr. Exit codes:
0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .alignment import ALIGN_METHODS, aligned_retrieve
from .corpus import SegmentConfig, load_corpus
from .embedding import EmbedConfig
from .errors import UnweaverError
from .extraction import ExtractorConfig
from .gateway import (
    ENV_API_KEY,
    ENV_BASE_URL,
    ChatRequest,
    ModelGateway,
    answer_prompt,
    stub_answer,
)
from .index import (
    Index,
    IndexConfig,
    build_index,
    load_index,
    normalize_name,
    save_index,
)
from .retrieval import (
    METRICS,
    RULES,
    ElectionConfig,
    RetrievalResult,
    SimilarityConfig,
    retrieve,
)

log = logging.getLogger("unweaver.cli")

ENV_INDEX_PATH = "UNWEAVER_INDEX_PATH"
ENV_BACKEND = "UNWEAVER_BACKEND"
ENV_CHAT_MODEL = "UNWEAVER_CHAT_MODEL"
ENV_EMBED_MODEL = "UNWEAVER_EMBED_MODEL"

DEFAULT_INDEX_PATH = "unweaver_index.json"
BACKENDS = ("stub", "llm")


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, sort_keys=True, ensure_ascii=False))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    file_path = Path(path)
    try:
        if file_path.suffix.lower() == ".json":
            with file_path.open("rb") as handle:
                data = json.load(handle)
        else:
            with file_path.open("rb") as handle:
                data = tomllib.load(handle)
    except OSError as exc:
        raise click.UsageError(f"cannot read config file {path}: {exc}")
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise click.UsageError(f"cannot parse config file {path}: {exc}")
    if not isinstance(data, dict):
        raise click.UsageError(f"config file {path} must hold a table/object")
    return data


def _dig(config: dict, dotted: str):
    node = config
    for key in dotted.split("."):
        if not isinstance(node, dict) or key not in node:
            return None
        node = node[key]
    return node


def _resolve(flag, env_name: str | None, config: dict, dotted: str, default):
    """flags > environment > config file > built-in default."""
    if flag is not None:
        return flag
    if env_name:
        env_value = os.environ.get(env_name)
        if env_value:
            return env_value
    file_value = _dig(config, dotted)
    if file_value is not None:
        return file_value
    return default


def common_options(fn):
    fn = click.option("--verbose", is_flag=True, help="Log progress to stderr.")(fn)
    fn = click.option(
        "--backend",
        type=click.Choice(BACKENDS),
        default=None,
        help="stub = offline deterministic; llm = hosted models via the gateway.",
    )(fn)
    fn = click.option(
        "--index-path",
        "index_path",
        type=click.Path(dir_okay=False),
        default=None,
        help=f"Index file location (default {DEFAULT_INDEX_PATH}).",
    )(fn)
    fn = click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="JSON or TOML settings file.",
    )(fn)
    return fn


def query_options(fn):
    fn = click.option("--f", "f_policy", type=float, default=None, help="Per-chunk budget.")(fn)
    fn = click.option(
        "--k-prime", "k_prime", type=click.IntRange(min=1), default=None,
        help="Classes kept by aligned retrieval.",
    )(fn)
    fn = click.option(
        "--align",
        type=click.Choice(ALIGN_METHODS),
        default=None,
        help="Use aligned retrieval instead of the election.",
    )(fn)
    fn = click.option("--metric", type=click.Choice(METRICS), default=None)(fn)
    fn = click.option("--rule", type=click.Choice(RULES), default=None)(fn)
    fn = click.option("--r", "r", type=click.IntRange(min=1), default=None,
                      help="Chunks to elect.")(fn)
    fn = click.option("--k0", type=click.IntRange(min=1), default=None,
                      help="Classes surviving the similarity filter.")(fn)
    return fn


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _settings(config_path, index_path, backend) -> dict:
    config = _load_config_file(config_path)
    return {
        "file": config,
        "index_path": Path(
            _resolve(index_path, ENV_INDEX_PATH, config, "index_path", DEFAULT_INDEX_PATH)
        ),
        "backend": _resolve(backend, ENV_BACKEND, config, "backend", "stub"),
    }


def _build_gateway(settings: dict, required: bool) -> ModelGateway | None:
    config = settings["file"]
    base_url = _resolve(None, ENV_BASE_URL, config, "gateway.base_url", None)
    if base_url is None:
        if required:
            raise click.UsageError(
                f"the llm backend needs a base URL ({ENV_BASE_URL} or gateway.base_url)"
            )
        return None
    api_key = _resolve(None, ENV_API_KEY, config, "gateway.api_key", "")
    return ModelGateway(
        base_url=str(base_url),
        api_key=str(api_key),
        chat_model=str(_resolve(None, ENV_CHAT_MODEL, config, "gateway.chat_model", "default")),
        embed_model=str(_resolve(None, ENV_EMBED_MODEL, config, "gateway.embed_model", "default")),
    )


def _load(settings: dict) -> Index:
    return load_index(settings["index_path"])


def _run_retrieval(
    index: Index,
    question: str,
    settings: dict,
    k0,
    r,
    rule,
    metric,
    align,
    k_prime,
    f_policy,
    gateway: ModelGateway | None,
) -> RetrievalResult:
    config = settings["file"]
    align = _resolve(align, None, config, "align.method", None)
    if align is not None and align not in ALIGN_METHODS:
        raise click.UsageError(f"align must be one of {ALIGN_METHODS}")
    if align is not None:
        return aligned_retrieve(
            index,
            question,
            method=align,
            f_policy=float(_resolve(f_policy, None, config, "align.f", 1.0)),
            k_prime=int(_resolve(k_prime, None, config, "align.k_prime", 5)),
            gateway=gateway,
        )
    sim_cfg = SimilarityConfig(
        metric=str(_resolve(metric, None, config, "retrieval.metric", "cosine")),
        k0=int(_resolve(k0, None, config, "retrieval.k0", 10)),
    )
    elect_cfg = ElectionConfig(
        rule=str(_resolve(rule, None, config, "retrieval.rule", "av")),
        r=int(_resolve(r, None, config, "retrieval.r", 5)),
    )
    return retrieve(index, question, sim_cfg, elect_cfg, gateway)


def _emit_retrieval(index: Index, result: RetrievalResult) -> None:
    _emit(
        {
            "classes": [
                {
                    "class_id": class_id,
                    "name": index.classes[class_id].name,
                    "score": score,
                }
                for class_id, score in result.selected_classes
            ],
            "elected_chunks": result.elected_chunks,
            "fallback": result.fallback,
            "padded": result.padded,
            "status": result.status,
        }
    )
    for chunk_id in result.elected_chunks:
        chunk = index.chunks[chunk_id]
        _emit(
            {
                "chunk_id": chunk_id,
                "score": result.rule_scores.get(chunk_id, 0.0),
                "source_id": chunk.source_id,
                "text": chunk.text,
            }
        )


def _runtime_error(exc: UnweaverError) -> None:
    log.error("%s", exc)
    sys.exit(1)


@click.group()
def main() -> None:
    """Entity-centric retrieval over a chunked document corpus."""


@main.command("index")
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--target-tokens", type=click.IntRange(min=8), default=None)
@click.option("--overlap-tokens", type=click.IntRange(min=0), default=None)
@click.option("--dim", type=click.IntRange(min=2), default=None,
              help="Stub embedding dimension.")
@common_options
def cmd_index(corpus_dir, target_tokens, overlap_tokens, dim, config_path,
              index_path, backend, verbose) -> None:
    """Build an index from the .txt/.md files under CORPUS_DIR."""
    _setup_logging(verbose)
    settings = _settings(config_path, index_path, backend)
    config = settings["file"]
    llm = settings["backend"] == "llm"
    try:
        index_config = IndexConfig(
            segment=SegmentConfig(
                target_tokens=int(
                    _resolve(target_tokens, None, config, "segment.target_tokens", 256)
                ),
                overlap_tokens=int(
                    _resolve(overlap_tokens, None, config, "segment.overlap_tokens", 32)
                ),
            ),
            extractor=ExtractorConfig(backend="llm" if llm else "stub"),
            embed=EmbedConfig(
                backend="api" if llm else "stub",
                dim=int(_resolve(dim, None, config, "embed.dim", 64)),
            ),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    gateway = _build_gateway(settings, required=llm)
    try:
        documents = load_corpus(Path(corpus_dir))
        index = build_index(documents, index_config, gateway)
        save_index(index, settings["index_path"])
    except UnweaverError as exc:
        _runtime_error(exc)
    _emit(
        {
            "chunks": index.n_chunks,
            "classes": index.n_classes,
            "index_path": str(settings["index_path"]),
            "token_usage": index.token_usage.as_dict(),
        }
    )


@main.command("query")
@click.argument("question")
@query_options
@common_options
def cmd_query(question, config_path, index_path, backend, verbose,
              k0, r, rule, metric, align, k_prime, f_policy) -> None:
    """Retrieve context chunks for QUESTION and print them as JSON lines."""
    _setup_logging(verbose)
    settings = _settings(config_path, index_path, backend)
    gateway = _build_gateway(settings, required=settings["backend"] == "llm")
    try:
        index = _load(settings)
        result = _run_retrieval(
            index, question, settings, k0, r, rule, metric, align, k_prime, f_policy, gateway
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    except UnweaverError as exc:
        _runtime_error(exc)
    _emit_retrieval(index, result)


@main.command("answer")
@click.argument("question")
@query_options
@common_options
def cmd_answer(question, config_path, index_path, backend, verbose,
               k0, r, rule, metric, align, k_prime, f_policy) -> None:
    """Answer QUESTION from retrieved context; print answer and provenance."""
    _setup_logging(verbose)
    settings = _settings(config_path, index_path, backend)
    llm = settings["backend"] == "llm"
    gateway = _build_gateway(settings, required=llm)
    try:
        index = _load(settings)
        result = _run_retrieval(
            index, question, settings, k0, r, rule, metric, align, k_prime, f_policy, gateway
        )
        if not result.elected_chunks:
            _runtime_error(UnweaverError("retrieval produced no context chunks"))
        chunks = [index.chunks[chunk_id] for chunk_id in result.elected_chunks]
        messages = answer_prompt(chunks, question)
        if llm:
            response = gateway.chat(
                ChatRequest(model=gateway.chat_model, messages=messages), phase="query"
            )
            answer = response.content
        else:
            answer = stub_answer(messages)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    except UnweaverError as exc:
        _runtime_error(exc)
    _emit({"answer": answer, "chunk_ids": result.elected_chunks})


@main.command("inspect")
@click.argument("entity_name")
@common_options
def cmd_inspect(entity_name, config_path, index_path, backend, verbose) -> None:
    """Show the equivalence class for ENTITY_NAME (name match is normalized)."""
    _setup_logging(verbose)
    settings = _settings(config_path, index_path, backend)
    try:
        index = _load(settings)
    except UnweaverError as exc:
        _runtime_error(exc)
    key = normalize_name(entity_name)
    for cls in index.classes:
        if cls.normalized_name == key:
            _emit(
                {
                    "chunk_ids": list(cls.chunk_ids),
                    "class_id": cls.class_id,
                    "description": cls.description,
                    "name": cls.name,
                    "normalized_name": cls.normalized_name,
                }
            )
            return
    log.error("no equivalence class named %r", entity_name)
    sys.exit(1)


@main.command("stats")
@common_options
def cmd_stats(config_path, index_path, backend, verbose) -> None:
    """Print index size and token usage."""
    _setup_logging(verbose)
    settings = _settings(config_path, index_path, backend)
    try:
        index = _load(settings)
    except UnweaverError as exc:
        _runtime_error(exc)
    _emit(
        {
            "chunks": index.n_chunks,
            "classes": index.n_classes,
            "embedding_dim": int(index.embeddings.shape[0]),
            "index_path": str(settings["index_path"]),
            "sources": len({chunk.source_id for chunk in index.chunks}),
            "token_usage": index.token_usage.as_dict(),
        }
    )


if __name__ == "__main__":
    main()
