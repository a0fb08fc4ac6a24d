import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from conceptsr.concepts import ConceptLibrary
from conceptsr.config import RunConfig
from conceptsr.errors import LlmUnavailable, MissingPlaceholderValue, ReplayMiss
from conceptsr.exprcore import OperatorSet, complexity, format_expr, parse
from conceptsr.llmops import (
    HttpBackend,
    PromptBindings,
    RecordingBackend,
    ReplayBackend,
    ScriptedBackend,
    dataset_digest,
    llm_crossover,
    llm_init,
    llm_mutate,
    load_template,
    make_backend,
    parse_candidates,
    prompt_digest,
    render_prompt,
)

OPS = OperatorSet(variable_names=("x1", "x2"))


def test_render_prompt():
    b = PromptBindings(concepts=["a", "b"], variables="x1, x2")
    assert render_prompt("{{concepts}} | {{ variables }}", b) == "1. a\n2. b | x1, x2"
    assert render_prompt("{{concepts}}", PromptBindings(concepts=[])) == "(no concepts yet)"
    with pytest.raises(MissingPlaceholderValue):
        render_prompt("{{variables}}", PromptBindings())
    with pytest.raises(MissingPlaceholderValue):
        render_prompt("{{unknown}}", PromptBindings())
    with pytest.raises(MissingPlaceholderValue):
        render_prompt("{{expressions}}", PromptBindings(expressions=[]))


def test_bundled_templates_render():
    b = PromptBindings(concepts=["c"], variables="x1", operators="binary: +", expressions=["x1"],
                       good_expressions=["x1"], bad_expressions=["x2"])
    for name in ("init", "mutate", "crossover", "abstraction", "evolution"):
        text = render_prompt(load_template(name), b)
        assert "{{" not in text


def test_template_override(tmp_path):
    (tmp_path / "init.txt").write_text("custom {{variables}}")
    assert load_template("init", tmp_path) == "custom {{variables}}"
    assert "custom" not in load_template("mutate", tmp_path)


def test_parse_candidates_tolerates_chatty_replies():
    reply = "Sure! Here are some ideas:\n1. x1 * x2\n- `sin(x1) + 2`\ny = x1 / x2\n```\n$x2 - x1$\nnot an expression\n"
    found = [format_expr(e) for e in parse_candidates(reply, OPS, 10)]
    assert found == ["(x1 * x2)", "(sin(x1) + 2.0)", "(x1 / x2)", "(x2 - x1)"]
    assert len(parse_candidates(reply, OPS, 2)) == 2
    assert parse_candidates("", OPS, 3) == []


def test_dataset_digest(linear_data):
    text = dataset_digest(linear_data, 5)
    assert len(text.splitlines()) == 5 and "-> y=" in text


def test_scripted_and_counters():
    b = ScriptedBackend(["one", "two"])
    assert b.complete("p") == "one" and b.complete("q") == "two"
    with pytest.raises(LlmUnavailable):
        b.complete("r")
    assert b.counters() == {"calls": 3, "failures": 1, "fallbacks": 0}
    assert b.prompts == ["p", "q", "r"]


def test_replay_and_recording(tmp_path):
    path = tmp_path / "store.jsonl"
    rec = RecordingBackend(ScriptedBackend(responder=lambda p: p.upper()), path)
    assert rec.complete("hello") == "HELLO"
    replay = ReplayBackend.load(path)
    assert replay.complete("hello") == "HELLO"
    with pytest.raises(ReplayMiss) as exc:
        replay.complete("other")
    assert exc.value.digest == prompt_digest("other")
    replay.add("other", "x")
    replay.save(tmp_path / "b.jsonl")
    assert ReplayBackend.load(tmp_path / "b.jsonl").complete("other") == "x"


def test_make_backend(tmp_path):
    assert make_backend("off") is None
    cfg = RunConfig().llm
    with pytest.raises(ValueError):
        make_backend("replay", cfg)
    cfg.replay_path = str(tmp_path / "r.jsonl")
    (tmp_path / "r.jsonl").write_text("")
    assert isinstance(make_backend("replay", cfg), ReplayBackend)
    with pytest.raises(ValueError):
        make_backend("carrier-pigeon", cfg)


# ---------------------------------------------------------------------------
# HTTP client against a local stub server


class _Stub(BaseHTTPRequestHandler):
    plan = []
    seen = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((body, self.headers.get("Authorization")))
        status = type(self).plan.pop(0) if type(self).plan else 200
        if status != 200:
            self.send_response(status)
            self.end_headers()
            return
        payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": "x1 + x2"}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _Stub.plan, _Stub.seen = [], []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    server.shutdown()


def test_http_backend_retries_then_succeeds(stub_server, monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "sekrit")
    _Stub.plan = [503, 429]
    b = HttpBackend(stub_server, "m", api_key_env="TEST_LLM_KEY", max_retries=3, backoff=0.01)
    assert b.complete("hi") == "x1 + x2"
    assert b.requests == 3
    body, auth = _Stub.seen[-1]
    assert auth == "Bearer sekrit"
    assert body["model"] == "m" and body["messages"][0]["content"] == "hi"


def test_http_backend_gives_up(stub_server):
    _Stub.plan = [500] * 10
    b = HttpBackend(stub_server, "m", api_key_env="", max_retries=2, backoff=0.01)
    with pytest.raises(LlmUnavailable):
        b.complete("hi")
    assert b.requests == 3 and b.failures == 1


def test_http_backend_unreachable():
    b = HttpBackend("http://127.0.0.1:9/none", "m", api_key_env="", max_retries=1, backoff=0.01, timeout=1)
    with pytest.raises(LlmUnavailable):
        b.complete("hi")


def test_http_backend_bounds_concurrency(stub_server):
    b = HttpBackend(stub_server, "m", api_key_env="", max_inflight=2)
    threads = [threading.Thread(target=b.complete, args=("p",)) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert b.calls == 6 and b.failures == 0


# ---------------------------------------------------------------------------
# LLM operators


def _cfg():
    return RunConfig(max_complexity=15, max_depth=6)


def test_llm_mutate_uses_reply_and_concepts(rng):
    b = ScriptedBackend(responder=lambda p: "x1 * x2")
    lib = ConceptLibrary()
    lib.add("use products of variables", 0)
    out = llm_mutate(parse("x1", OPS), lib, OPS, b, _cfg(), rng)
    assert format_expr(out) == "(x1 * x2)"
    assert "use products of variables" in b.prompts[0] and "x1" in b.prompts[0]


def test_llm_operators_fall_back(rng):
    cfg = _cfg()
    failing = ScriptedBackend()
    e = parse("x1 + 1", OPS)
    out = llm_mutate(e, ConceptLibrary(), OPS, failing, cfg, rng)
    assert complexity(out) <= cfg.max_complexity
    assert failing.fallbacks == 1 and failing.failures == 1
    too_big = ScriptedBackend(responder=lambda p: " + ".join(["x1"] * 20))
    llm_crossover(e, parse("x2", OPS), ConceptLibrary(), OPS, too_big, cfg, rng)
    assert too_big.fallbacks == 1
    exprs = llm_init(ConceptLibrary(), OPS, 4, ScriptedBackend(responder=lambda p: "x1\nx2 * 3"), cfg, rng)
    assert [format_expr(x) for x in exprs[:2]] == ["x1", "(x2 * 3.0)"] and len(exprs) == 4


def test_fallback_leaves_main_stream_unchanged():
    # the concept sampler is spawned, so a failed LLM call followed by the
    # symbolic operator gives the same result as the symbolic operator alone
    from conceptsr.evolve import mutate

    cfg = _cfg()
    e = parse("x1 + 1", OPS)
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    r2.spawn(1)
    via_llm = llm_mutate(e, ConceptLibrary(), OPS, ScriptedBackend(), cfg, r1)
    direct = mutate(e, cfg.mutation_weights, OPS, r2, cfg)
    assert via_llm == direct


def test_include_data_adds_rows(rng, linear_data, tmp_path):
    (tmp_path / "init.txt").write_text("{{concepts}}\n{{data}}\nvars: {{variables}}")
    cfg = _cfg()
    cfg.llm.include_data = True
    cfg.llm.data_rows = 3
    cfg.llm.prompt_dir = str(tmp_path)
    b = ScriptedBackend(responder=lambda p: "x1")
    llm_init(ConceptLibrary(), OPS, 1, b, cfg, rng, linear_data)
    assert b.prompts[0].count("-> y=") == 3
