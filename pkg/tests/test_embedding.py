import json

import httpx
import numpy as np
import pytest

from unweaver import (
    BackendError,
    DimensionMismatch,
    EmbedConfig,
    ModelGateway,
    embed,
    fnv1a_64,
    stub_vector,
)


def test_fnv1a_reference_values():
    # published FNV-1a 64-bit test vectors
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_stub_deterministic():
    a = stub_vector("alpha beta gamma", 16)
    b = stub_vector("alpha beta gamma", 16)
    assert np.array_equal(a, b)


def test_stub_unit_norm():
    v = stub_vector("some tokens here", 8)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12


def test_stub_multiplicity_is_collinear():
    one = stub_vector("a", 4)
    two = stub_vector("a a", 4)
    assert np.allclose(one, two)
    bucket = fnv1a_64(b"a") % 4
    assert one[bucket] == 1.0


def test_stub_empty_text_is_zero():
    assert np.array_equal(stub_vector("   ", 4), np.zeros(4))


def test_embed_batch_order():
    cfg = EmbedConfig(backend="stub", dim=8)
    out = embed(["one", "two", "one"], cfg)
    assert len(out) == 3
    assert np.array_equal(out[0], out[2])


def test_embed_config_validation():
    with pytest.raises(ValueError):
        EmbedConfig(backend="nope")
    with pytest.raises(ValueError):
        EmbedConfig(backend="stub", dim=1)


def api_gateway(vectors, usage=None):
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        assert body["model"] == "m"
        payload = {
            "data": [
                {"index": i, "embedding": vectors[i]} for i in range(len(body["input"]))
            ]
        }
        if usage is not None:
            payload["usage"] = usage
        # serialize by hand: stdlib json emits NaN literals, which the
        # non-finite rejection test needs to smuggle through the wire
        return httpx.Response(
            200,
            content=json.dumps(payload),
            headers={"content-type": "application/json"},
        )

    return ModelGateway(
        base_url="http://mock", api_key="k", transport=httpx.MockTransport(handler)
    )


def test_api_backend_roundtrip():
    gateway = api_gateway([[1.0, 2.0], [3.0, 4.0]], usage={"prompt_tokens": 9})
    cfg = EmbedConfig(backend="api", dim=2, model="m")
    out = embed(["a", "b"], cfg, gateway, phase="query")
    assert np.array_equal(out[1], np.array([3.0, 4.0]))
    assert gateway.usage.query_embed == 9
    assert gateway.usage.index_embed == 0


def test_api_backend_dimension_mismatch():
    gateway = api_gateway([[1.0, 2.0, 3.0]])
    with pytest.raises(DimensionMismatch):
        embed(["a"], EmbedConfig(backend="api", dim=2, model="m"), gateway)


def test_api_backend_nonfinite_rejected():
    gateway = api_gateway([[1.0, float("nan")]])
    with pytest.raises(BackendError):
        embed(["a"], EmbedConfig(backend="api", dim=2, model="m"), gateway)


def test_api_backend_requires_gateway():
    with pytest.raises(ValueError):
        embed(["a"], EmbedConfig(backend="api", dim=2))
