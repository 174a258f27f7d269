import json
from pathlib import Path

import httpx
import numpy as np
import pytest

from unweaver import (
    Chunk,
    EmbedConfig,
    EquivalenceClass,
    Index,
    IndexConfig,
    ModelGateway,
    build_index,
    load_corpus,
)

import acceptance_report

FIXTURE_CORPUS = Path(__file__).parent / "fixtures" / "corpus"

# Hand-checkable worked instance: two chunks, three classes, class 2 shared.
WORKED_C = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
WORKED_V = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
WORKED_Q = np.array([1.0, 1.0])
WORKED_F = np.array([1.0, 1.0])


@pytest.fixture(scope="session")
def fixture_corpus_dir() -> Path:
    return FIXTURE_CORPUS


@pytest.fixture(scope="session")
def fixture_index() -> Index:
    return build_index(load_corpus(FIXTURE_CORPUS))


def make_embed_gateway(vector: list[float]) -> ModelGateway:
    """Gateway whose embeddings endpoint returns `vector` for every input."""

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        return httpx.Response(
            200,
            json={
                "data": [
                    {"index": i, "embedding": list(vector)}
                    for i in range(len(body["input"]))
                ],
                "usage": {"prompt_tokens": len(body["input"])},
            },
        )

    return ModelGateway(
        base_url="http://mock", api_key="test", transport=httpx.MockTransport(handler)
    )


def worked_index() -> Index:
    """Handcrafted index carrying the worked-instance matrices.

    Query embeddings must come through an api-backend gateway so tests can
    pin q exactly.
    """
    chunks = [
        Chunk(chunk_id=0, source_id="a.txt", text="chunk zero text", token_count=3),
        Chunk(chunk_id=1, source_id="b.txt", text="chunk one text", token_count=3),
    ]
    classes = [
        EquivalenceClass(0, "Alpha", "alpha", (0,), "alpha desc"),
        EquivalenceClass(1, "Beta", "beta", (1,), "beta desc"),
        EquivalenceClass(2, "Gamma", "gamma", (0, 1), "gamma desc"),
    ]
    return Index(
        config=IndexConfig(embed=EmbedConfig(backend="api", dim=2)),
        chunks=chunks,
        classes=classes,
        embeddings=WORKED_V.copy(),
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = acceptance_report.summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
