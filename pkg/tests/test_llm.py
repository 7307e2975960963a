import json

import httpx
import pytest

from oracles import token_rank
from tagsmith.llm import (
    ChatCompletionClient,
    CompletionRequest,
    MockLLM,
    PermanentError,
    RateLimiter,
    RetriableError,
    RetryPolicy,
    batch_complete,
    tokenize,
)


def clue_prompt(text: str) -> str:
    return f'Below is a video. Its "title" is "{text}". Give tags.'


@pytest.mark.parametrize(
    "text,expected",
    [("cat cat dog", "cat, dog"), ("b a bb aa", "aa, bb"), ("", ""), ("x y z", "")],
)
def test_mock_examples(text, expected):
    assert MockLLM().respond(clue_prompt(text)) == expected


def test_mock_ties_break_lexicographically():
    assert MockLLM(top_j=2).respond(clue_prompt("zz yy xx")) == "xx, yy"


def test_mock_matches_token_oracle_on_ascii():
    text = "alpha beta alpha gamma beta alpha delta epsilon zeta eta"
    assert MockLLM().respond(clue_prompt(text)).split(", ") == token_rank(text, 5)


def test_mock_reads_every_clue_region_and_cjk():
    prompt = '"标题"为"钓鱼乐趣"，"类目"为"钓鱼乐趣 户外" and "asr" is "fish"'
    assert MockLLM().respond(prompt) == "钓鱼乐趣, fish, 户外"
    assert tokenize("abc钓鱼def") == ["abc", "钓鱼", "def"]


def test_mock_echoes_candidates():
    prompt = '"title" is "cat dog". The "candidate tags" are "a1, b2, c3, d4". Pick.'
    assert MockLLM(top_j=3).respond(prompt) == "a1, b2, c3"


def test_mock_ideographic_delimiter():
    assert MockLLM(delimiter="ideographic_enum").respond(clue_prompt("ab ab cd")) == "ab、cd"


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest("")
    with pytest.raises(ValueError):
        CompletionRequest("x", temperature=3.0)
    with pytest.raises(ValueError):
        CompletionRequest("x", max_output_chars=0)


def chat_ok(text="cats, dogs"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def scripted(responses):
    calls = []

    def handler(request):
        calls.append(json.loads(request.content))
        r = responses[min(len(calls) - 1, len(responses) - 1)]
        if isinstance(r, Exception):
            raise r
        return r

    return httpx.MockTransport(handler), calls


def client(transport, sleeps=None, **kw):
    return ChatCompletionClient(
        "http://llm.test/v1",
        "m",
        api_key="k",
        transport=transport,
        retry=RetryPolicy(deterministic=True, **kw),
        sleep=(sleeps.append if sleeps is not None else lambda s: None),
    )


def test_retry_on_429_then_success():
    transport, calls = scripted([httpx.Response(429), httpx.Response(429), chat_ok()])
    sleeps: list[float] = []
    res = client(transport, sleeps).complete(CompletionRequest("hi"))
    assert res.text == "cats, dogs"
    assert res.attempt_count == 3
    assert sleeps == [1.0, 2.0]
    assert calls[0]["messages"] == [{"role": "user", "content": "hi"}]
    assert res.backend_name == "chat:m"


def test_transport_errors_retry():
    transport, _ = scripted([httpx.ConnectError("down"), chat_ok()])
    assert client(transport).complete(CompletionRequest("hi")).attempt_count == 2


def test_retry_cap():
    transport, calls = scripted([httpx.Response(503)])
    with pytest.raises(RetriableError) as info:
        client(transport, max_attempts=4).complete(CompletionRequest("hi"))
    assert len(calls) == 4
    assert info.value.attempts == 4


@pytest.mark.parametrize("status", [401, 403])
def test_auth_failure_is_permanent(status):
    transport, calls = scripted([httpx.Response(status, text="bad key")])
    with pytest.raises(PermanentError, match="authentication"):
        client(transport).complete(CompletionRequest("hi"))
    assert len(calls) == 1


def test_other_client_errors_are_permanent():
    transport, calls = scripted([httpx.Response(400, text="bad")])
    with pytest.raises(PermanentError):
        client(transport).complete(CompletionRequest("hi"))
    assert len(calls) == 1


@pytest.mark.parametrize(
    "response",
    [httpx.Response(200, content=b""), httpx.Response(200, json={"choices": []}), chat_ok("   ")],
)
def test_empty_body_is_permanent(response):
    transport, _ = scripted([response])
    with pytest.raises(PermanentError, match="empty"):
        client(transport).complete(CompletionRequest("hi"))


def test_output_truncated_to_cap():
    transport, _ = scripted([chat_ok("x" * 50)])
    assert client(transport).complete(CompletionRequest("hi", max_output_chars=10)).text == "x" * 10


def test_backoff_schedule():
    p = RetryPolicy(deterministic=True)
    assert [p.delay(k) for k in range(3)] == [1.0, 2.0, 4.0]
    jittered = RetryPolicy(jitter=0.1)
    for k in range(3):
        assert 2**k <= jittered.delay(k) <= 2**k * 1.1


def test_rate_limiter_spacing():
    now = [0.0]
    waits: list[float] = []

    def sleep(s):
        waits.append(s)
        now[0] += s

    rl = RateLimiter(0.5, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        rl.acquire()
    assert waits == [0.5, 0.5]
    now[0] += 10
    assert rl.acquire() == 0.0


class Flaky:
    name = "flaky"

    def complete(self, req):
        if "boom" in req.prompt:
            raise PermanentError("nope")
        return MockLLM().complete(req)


def test_batch_keeps_order_and_error_slots():
    reqs = [CompletionRequest(clue_prompt(t)) for t in ("aa bb", "boom", "cc cc dd")]
    out = batch_complete(Flaky(), reqs, parallelism=3)
    assert out[0].text == "aa, bb"
    assert isinstance(out[1], PermanentError)
    assert out[2].text == "cc, dd"


def test_batch_parallel_equals_sequential():
    reqs = [CompletionRequest(clue_prompt(f"w{i % 7}x w{i % 3}y w{i % 7}x")) for i in range(1000)]
    seq = [r.text for r in batch_complete(MockLLM(), reqs, 1)]
    par = [r.text for r in batch_complete(MockLLM(), reqs, 8)]
    assert seq == par
