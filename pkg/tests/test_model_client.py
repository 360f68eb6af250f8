import json

import httpx
import pytest

from ifengine.errors import (
    AuthError,
    MalformedResponseError,
    RateLimitedError,
    SchemaError,
    TransportError,
    ValidationError,
)
from ifengine.model_client import (
    GenerationRequest,
    HttpClientConfig,
    HttpGenerationClient,
    MockGenerationClient,
    load_client,
)


class TestGenerationRequest:
    def test_validation(self):
        with pytest.raises(ValidationError):
            GenerationRequest(prompt="p", n=0)
        with pytest.raises(ValidationError):
            GenerationRequest(prompt="p", max_tokens=0)
        with pytest.raises(ValidationError):
            GenerationRequest(prompt="p", temperature=-1.0)


class TestMockClient:
    def test_list_script_returns_first_n(self):
        client = MockGenerationClient(["a", "b"])
        response = client.generate(GenerationRequest(prompt="anything", n=2))
        assert response.completions == ("a", "b")

    def test_short_script_is_malformed(self):
        client = MockGenerationClient(["only one"])
        with pytest.raises(MalformedResponseError):
            client.generate(GenerationRequest(prompt="x", n=2))

    def test_mapping_script_keyed_by_prompt(self):
        client = MockGenerationClient({"p1": ["yes"], "p2": ["no"]}, default=["fallback"])
        assert client.generate(GenerationRequest(prompt="p1")).completions == ("yes",)
        assert client.generate(GenerationRequest(prompt="p2")).completions == ("no",)
        assert client.generate(GenerationRequest(prompt="p3")).completions == ("fallback",)

    def test_pure_function_of_request(self):
        client = MockGenerationClient({"p": ["a", "b", "c"]})
        first = client.generate(GenerationRequest(prompt="p", n=2))
        second = client.generate(GenerationRequest(prompt="p", n=2))
        assert first.completions == second.completions == ("a", "b")

    def test_retry_after_scripted_failures(self):
        client = MockGenerationClient(
            ["ok"],
            failures=[TransportError("boom"), TransportError("boom again")],
            retry_budget=3,
        )
        response = client.generate(GenerationRequest(prompt="x"))
        assert response.completions == ("ok",)
        assert client.last_retry_count == 2
        assert client.call_count == 3

    def test_budget_exhaustion_raises(self):
        client = MockGenerationClient(
            ["ok"],
            failures=[TransportError(str(i)) for i in range(5)],
            retry_budget=2,
        )
        with pytest.raises(TransportError):
            client.generate(GenerationRequest(prompt="x"))

    def test_config_digest_stable(self):
        a = MockGenerationClient({"p": ["x"]})
        b = MockGenerationClient({"p": ["x"]})
        c = MockGenerationClient({"p": ["y"]})
        assert a.config_digest() == b.config_digest()
        assert a.config_digest() != c.config_digest()


def make_http_client(handler, **overrides) -> HttpGenerationClient:
    config = HttpClientConfig(
        base_url="https://llm.test/v1",
        api_key="secret",
        model="test-model",
        backoff_base=0.0,
        **overrides,
    )
    return HttpGenerationClient(config, transport=httpx.MockTransport(handler))


def ok_payload(contents, prompt_tokens=7, completion_tokens=11):
    return {
        "choices": [{"message": {"content": c}} for c in contents],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class TestHttpClient:
    def test_wire_format_and_parse(self):
        captured = {}

        def handler(request: httpx.Request) -> httpx.Response:
            captured["body"] = json.loads(request.content)
            captured["auth"] = request.headers.get("Authorization")
            captured["path"] = request.url.path
            return httpx.Response(200, json=ok_payload(["hello", "world"]))

        client = make_http_client(handler)
        response = client.generate(GenerationRequest(prompt="hi", n=2, max_tokens=64, temperature=0.7))
        assert response.completions == ("hello", "world")
        assert response.usage.prompt_units == 7
        assert response.usage.completion_units == 11
        assert captured["path"].endswith("/chat/completions")
        assert captured["auth"] == "Bearer secret"
        assert captured["body"] == {
            "model": "test-model",
            "messages": [{"role": "user", "content": "hi"}],
            "n": 2,
            "max_tokens": 64,
            "temperature": 0.7,
        }

    def test_retries_on_server_error_with_identical_payload(self):
        bodies = []

        def handler(request: httpx.Request) -> httpx.Response:
            bodies.append(bytes(request.content))
            if len(bodies) < 3:
                return httpx.Response(503)
            return httpx.Response(200, json=ok_payload(["ok"]))

        client = make_http_client(handler)
        response = client.generate(GenerationRequest(prompt="retry me"))
        assert response.completions == ("ok",)
        assert client.last_retry_count == 2
        assert len(set(bodies)) == 1  # byte-identical across retries

    def test_auth_error_is_fatal(self):
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(1)
            return httpx.Response(401)

        client = make_http_client(handler)
        with pytest.raises(AuthError):
            client.generate(GenerationRequest(prompt="x"))
        assert len(calls) == 1

    def test_rate_limit_respects_retry_after(self):
        sleeps = []
        attempts = []

        def handler(request: httpx.Request) -> httpx.Response:
            attempts.append(1)
            if len(attempts) == 1:
                return httpx.Response(429, headers={"Retry-After": "1.5"})
            return httpx.Response(200, json=ok_payload(["ok"]))

        config = HttpClientConfig(base_url="https://llm.test/v1", model="m", backoff_base=9.0)
        client = HttpGenerationClient(config, transport=httpx.MockTransport(handler))
        client._sleep = sleeps.append
        response = client.generate(GenerationRequest(prompt="x"))
        assert response.completions == ("ok",)
        assert sleeps == [1.5]

    def test_rate_limit_without_budget_raises(self):
        client = make_http_client(lambda request: httpx.Response(429), retry_budget=0)
        with pytest.raises(RateLimitedError):
            client.generate(GenerationRequest(prompt="x"))

    def test_malformed_payload(self):
        client = make_http_client(lambda request: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(MalformedResponseError):
            client.generate(GenerationRequest(prompt="x"))

    def test_wrong_completion_count(self):
        client = make_http_client(lambda request: httpx.Response(200, json=ok_payload(["just one"])))
        with pytest.raises(MalformedResponseError):
            client.generate(GenerationRequest(prompt="x", n=3))

    def test_digest_excludes_credential(self):
        def handler(request):
            return httpx.Response(200, json=ok_payload(["x"]))

        a = make_http_client(handler)
        b_config = HttpClientConfig(base_url="https://llm.test/v1", api_key="other", model="test-model")
        b = HttpGenerationClient(b_config, transport=httpx.MockTransport(handler))
        assert a.config_digest() == b.config_digest()


class TestLoadClient:
    def test_mock_from_file(self, tmp_path):
        path = tmp_path / "client.json"
        path.write_text(json.dumps({"type": "mock", "script": {"p": ["a"]}, "default": ["d"]}))
        client = load_client(path)
        assert isinstance(client, MockGenerationClient)
        assert client.generate(GenerationRequest(prompt="p")).completions == ("a",)
        assert client.generate(GenerationRequest(prompt="q")).completions == ("d",)

    def test_http_from_env(self, monkeypatch):
        monkeypatch.setenv("IFENGINE_BASE_URL", "https://env.test/v1")
        monkeypatch.setenv("IFENGINE_MODEL", "env-model")
        client = load_client({"type": "http"})
        assert isinstance(client, HttpGenerationClient)
        assert client.config.base_url == "https://env.test/v1"
        assert client.config.model == "env-model"

    def test_file_overrides_env(self, monkeypatch):
        monkeypatch.setenv("IFENGINE_BASE_URL", "https://env.test/v1")
        client = load_client({"type": "http", "base_url": "https://file.test/v1", "model": "m"})
        assert client.config.base_url == "https://file.test/v1"

    def test_unknown_type_rejected(self):
        with pytest.raises(SchemaError):
            load_client({"type": "carrier-pigeon"})
