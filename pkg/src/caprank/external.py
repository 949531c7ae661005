"""Client side of the external-expert protocol.

Transport is line-delimited JSON over the adapter's stdin/stdout, UTF-8,
one object per line:

    parent -> {"op": "hello", "version": 1}
    child  <- {"ok": true, "name": <string>, "version": 1}
    parent -> {"id": <int>, "op": "score", "caption": <string>, "visual": <string>}
    child  <- {"id": <int>, "score": <number>}   or   {"id": <int>, "error": <string>}
    parent -> {"op": "bye"}                       (child exits 0)

Requests are synchronous and serialized per adapter process.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import threading
from collections import deque
from typing import Optional

log = logging.getLogger("caprank")

PROTOCOL_VERSION = 1


class AdapterError(RuntimeError):
    """The external adapter failed to spawn, answer, or follow the protocol.

    Maps to CLI exit code 3.
    """


class ExternalExpertClient:
    """Owns one adapter child process and serializes score requests to it."""

    def __init__(self, command: str, timeout_ms: int = 10_000):
        self.command = command
        self.timeout = timeout_ms / 1000.0
        self.name: Optional[str] = None
        self._next_id = 0
        self._lock = threading.Lock()
        self._stderr_tail: deque[str] = deque(maxlen=20)
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise AdapterError(f"failed to spawn adapter {command!r}: {exc}") from exc
        self._lines: queue.Queue[Optional[str]] = queue.Queue()
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        self._handshake()

    def _pump_stdout(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _pump_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _stderr_excerpt(self) -> str:
        return "\n".join(self._stderr_tail) or "<no stderr output>"

    def _send(self, obj: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(obj, ensure_ascii=False) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise AdapterError(
                f"adapter {self.command!r} closed its stdin; stderr:\n{self._stderr_excerpt()}"
            ) from exc

    def _recv(self, context: str) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise AdapterError(f"adapter timed out after {self.timeout:.1f}s during {context}")
        if line is None:
            raise AdapterError(
                f"adapter exited during {context}; stderr:\n{self._stderr_excerpt()}"
            )
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AdapterError(f"adapter sent malformed JSON during {context}: {line!r}") from exc
        if not isinstance(obj, dict):
            raise AdapterError(f"adapter sent a non-object during {context}: {line!r}")
        return obj

    def _handshake(self) -> None:
        self._send({"op": "hello", "version": PROTOCOL_VERSION})
        reply = self._recv("handshake")
        if reply.get("ok") is not True:
            raise AdapterError(f"adapter refused the handshake: {reply!r}")
        version = reply.get("version")
        if version != PROTOCOL_VERSION:
            raise AdapterError(
                f"adapter speaks protocol version {version!r}, this build speaks {PROTOCOL_VERSION}"
            )
        self.name = str(reply.get("name", "<unnamed>"))

    def score(self, caption: str, visual: str) -> float:
        """Synchronous relatedness request for one (caption, visual) pair."""
        with self._lock:
            self._next_id += 1
            request_id = self._next_id
            self._send({"id": request_id, "op": "score", "caption": caption, "visual": visual})
            reply = self._recv(f"score({caption!r}, {visual!r})")
        if reply.get("id") != request_id:
            raise AdapterError(
                f"adapter answered id {reply.get('id')!r} to request {request_id}"
            )
        if "error" in reply:
            raise AdapterError(f"adapter error for ({caption!r}, {visual!r}): {reply['error']}")
        value = reply.get("score")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise AdapterError(f"adapter sent a non-numeric score: {reply!r}")
        return float(value)

    def close(self) -> None:
        """Send the shutdown message and reap the child."""
        if self._proc.poll() is None:
            try:
                self._send({"op": "bye"})
            except AdapterError:
                pass
            try:
                self._proc.wait(timeout=self.timeout)
            except subprocess.TimeoutExpired:
                log.warning("adapter ignored shutdown; killing it")
                self._proc.kill()
                self._proc.wait()
        for stream in (self._proc.stdin, self._proc.stdout, self._proc.stderr):
            if stream is not None:
                stream.close()

    def __enter__(self) -> "ExternalExpertClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def spawn_external_expert(command: str, timeout_ms: int = 10_000) -> ExternalExpertClient:
    """Start an adapter process and complete the handshake."""
    return ExternalExpertClient(command, timeout_ms=timeout_ms)
