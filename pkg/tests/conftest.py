import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


class StubLlmServer:
    """In-process chat-completion endpoint for offline tests.

    Modes:
      polish  -> "润色建议：" + short hash of the prompt (a suggestion)
      echo    -> the prompt itself
      empty   -> empty content string
      fail500 -> HTTP 500
      auth401 -> HTTP 401
    Records every request body and arrival time.
    """

    def __init__(self, mode="polish"):
        self.mode = mode
        self.requests: list[dict] = []
        self.times: list[float] = []
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                with stub._lock:
                    stub.requests.append(body)
                    stub.times.append(time.monotonic())
                if stub.mode == "fail500":
                    self.send_response(500)
                    self.end_headers()
                    return
                if stub.mode == "auth401":
                    self.send_response(401)
                    self.end_headers()
                    self.wfile.write(b'{"error": "bad key"}')
                    return
                prompt = body["messages"][-1]["content"]
                if stub.mode == "empty":
                    content = ""
                elif stub.mode == "echo":
                    content = prompt
                else:
                    digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:8]
                    content = "润色建议：" + digest
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": content}}]}
                ).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def endpoint(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def reset(self, mode=None):
        with self._lock:
            self.requests.clear()
            self.times.clear()
        if mode is not None:
            self.mode = mode

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_llm():
    server = StubLlmServer()
    yield server
    server.close()


@pytest.fixture(autouse=True)
def api_key(monkeypatch):
    monkeypatch.setenv("COQ_FORGE_API_KEY", "test-key")


@pytest.fixture
def demo_corpus_path():
    return FIXTURES / "demo_corpus.jsonl"
