from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest

from samcheck.errors import AuthError, CacheMiss, ProviderError, TransportError
from samcheck.gateway import (
    CacheMode,
    Gateway,
    LlmRequest,
    OpenAIChatAdapter,
    ProviderConfig,
    ResponseCache,
    complete,
    request_id_for,
)

KEY_ENV = "SAMCHECK_TEST_KEY"


def _body(text: str) -> dict:
    return {"model": "stub", "choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"total_tokens": 3}}


class _Stub(BaseHTTPRequestHandler):
    hits = 0
    seen: list[dict] = []

    def do_POST(self):
        type(self).hits += 1
        length = int(self.headers["Content-Length"])
        type(self).seen.append({"auth": self.headers.get("Authorization"), "body": json.loads(self.rfile.read(length))})
        payload = json.dumps(_body(f"<START>No misconfigurations<END> #{type(self).hits}")).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _Stub.hits, _Stub.seen = 0, []
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()
    server.server_close()


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv(KEY_ENV, "sk-test")
    return KEY_ENV


def _cfg(url="http://stub.invalid/v1/chat/completions", **kw) -> ProviderConfig:
    return ProviderConfig(endpoint_url=url, model_name="stub-model", credential_env_var=KEY_ENV, **kw)


def _mock_client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_request_id_is_stable_and_sensitive():
    base = request_id_for("m", 0.0, "prompt")
    assert base == LlmRequest("prompt", "m", 0.0).request_id
    assert base != request_id_for("m", 0.1, "prompt")
    assert base != request_id_for("m2", 0.0, "prompt")
    assert base != request_id_for("m", 0.0, "prompt ")
    assert request_id_for("ab", 0.0, "c") != request_id_for("a", 0.0, "bc")


def test_replay_hit_and_miss(tmp_path):
    path = tmp_path / "cache.jsonl"
    req = LlmRequest("hello", "stub-model", 0.0)
    ResponseCache(path, CacheMode.RECORD).append(req, "<START>No misconfigurations<END>")
    cache = ResponseCache(path, CacheMode.REPLAY)
    resp = complete(req, _cfg(), cache)
    assert resp.raw_text == "<START>No misconfigurations<END>" and resp.from_cache
    with pytest.raises(CacheMiss):
        complete(LlmRequest("other", "stub-model", 0.0), _cfg(), cache)


def test_record_against_stub_then_replay(tmp_path, stub_server, api_key):
    path = tmp_path / "cache.jsonl"
    recorder = Gateway(_cfg(stub_server), ResponseCache(path, CacheMode.RECORD))
    first = recorder.ask("prompt text", repetition=0)
    assert not first.from_cache and first.raw_text.endswith("#1")
    assert _Stub.seen[0]["auth"] == "Bearer sk-test"
    assert _Stub.seen[0]["body"]["messages"] == [{"role": "user", "content": "prompt text"}]
    assert _Stub.seen[0]["body"]["model"] == "stub-model" and _Stub.seen[0]["body"]["temperature"] == 0.0
    # recording the same repetition again reuses the stored answer
    assert recorder.ask("prompt text", repetition=0).from_cache
    second = recorder.ask("prompt text", repetition=1)
    assert second.raw_text.endswith("#2") and _Stub.hits == 2

    replay = Gateway(_cfg(stub_server), ResponseCache(path, CacheMode.REPLAY))
    assert replay.ask("prompt text", 0).raw_text == first.raw_text
    assert replay.ask("prompt text", 1).raw_text == second.raw_text
    assert replay.ask("prompt text", 4).raw_text == second.raw_text
    assert _Stub.hits == 2
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["repetition"] for r in lines] == [0, 1]
    assert {"request_id", "model", "temperature", "prompt_sha", "response_text", "timestamp"} <= set(lines[0])


def test_passthrough_stores_nothing(tmp_path, stub_server, api_key):
    gw = Gateway(_cfg(stub_server), ResponseCache(None, CacheMode.PASSTHROUGH))
    assert gw.ask("p").raw_text.endswith("#1")
    assert gw.ask("p").raw_text.endswith("#2")
    assert len(gw.cache) == 0


def test_missing_key_is_auth_error(monkeypatch):
    monkeypatch.delenv(KEY_ENV, raising=False)
    with pytest.raises(AuthError):
        Gateway(_cfg(), ResponseCache(None, "passthrough")).ask("p")


@pytest.mark.parametrize("status", [401, 403])
def test_rejected_credentials(api_key, status):
    client = _mock_client(lambda req: httpx.Response(status, json={"error": "no"}))
    with pytest.raises(AuthError):
        complete(LlmRequest("p", "stub-model"), _cfg(), ResponseCache(None, "passthrough"), client=client)


def test_server_error_is_provider_error_without_retry(api_key):
    calls = []

    def handler(req):
        calls.append(req)
        return httpx.Response(500, text="boom")

    with pytest.raises(ProviderError) as info:
        complete(LlmRequest("p", "stub-model"), _cfg(), ResponseCache(None, "passthrough"), client=_mock_client(handler))
    assert info.value.status == 500 and len(calls) == 1


def test_malformed_body_is_provider_error(api_key):
    client = _mock_client(lambda req: httpx.Response(200, json={"choices": []}))
    with pytest.raises(ProviderError):
        complete(LlmRequest("p", "stub-model"), _cfg(), ResponseCache(None, "passthrough"), client=client)


def test_transport_errors_retry_with_backoff(api_key):
    attempts, sleeps = [], []

    def handler(req):
        attempts.append(req)
        if len(attempts) < 3:
            raise httpx.ConnectError("refused", request=req)
        return httpx.Response(200, json=_body("ok"))

    resp = complete(LlmRequest("p", "stub-model"), _cfg(backoff_base=0.5), ResponseCache(None, "passthrough"),
                    client=_mock_client(handler), sleep=sleeps.append)
    assert resp.raw_text == "ok"
    assert sleeps == [0.5, 1.0]


def test_transport_errors_exhaust_attempts(api_key):
    def handler(req):
        raise httpx.ReadTimeout("slow", request=req)

    sleeps = []
    with pytest.raises(TransportError):
        complete(LlmRequest("p", "stub-model"), _cfg(max_attempts=2), ResponseCache(None, "passthrough"),
                 client=_mock_client(handler), sleep=sleeps.append)
    assert sleeps == [1.0]


def test_system_message_option():
    req = LlmRequest("p", "m")
    plain = OpenAIChatAdapter().build_payload(req, ProviderConfig())
    assert [m["role"] for m in plain["messages"]] == ["user"]
    with_system = OpenAIChatAdapter().build_payload(req, ProviderConfig(system_message=True))
    assert [m["role"] for m in with_system["messages"]] == ["system", "user"]


def test_unreadable_cache_lines_are_skipped(tmp_path):
    path = tmp_path / "cache.jsonl"
    req = LlmRequest("p", "m")
    ResponseCache(path, "record").append(req, "fine")
    with path.open("a") as fh:
        fh.write("{not json\n\n")
    cache = ResponseCache(path, "replay")
    assert len(cache) == 1 and cache.lookup(req.request_id)["response_text"] == "fine"


def test_record_and_replay_need_a_path():
    for mode in ("record", "replay"):
        with pytest.raises(ValueError):
            ResponseCache(None, mode)


def test_concurrent_recording_appends_once_per_request(tmp_path, api_key):
    lock = threading.Lock()
    count = {"n": 0}

    def handler(req):
        with lock:
            count["n"] += 1
        return httpx.Response(200, json=_body(json.loads(req.content)["messages"][0]["content"].upper()))

    path = tmp_path / "cache.jsonl"
    gw = Gateway(_cfg(concurrency=3), ResponseCache(path, "record"), client=_mock_client(handler))
    prompts = [f"prompt {i}" for i in range(20)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        answers = list(pool.map(gw.ask, prompts))
    assert [a.raw_text for a in answers] == [p.upper() for p in prompts]
    assert count["n"] == 20 and len(ResponseCache(path, "replay")) == 20
