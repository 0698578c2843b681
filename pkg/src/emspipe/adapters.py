"""Line-delimited JSON clients for external inference engines.

Protocol (version 1): one JSON object per line in each direction. Every
request carries an id field (``window_id`` or ``frame_id``) that the
response must echo; replies for older requests (for example, answers that
arrive after their deadline passed) are discarded while waiting. This lets
any real ASR/classifier/ranker process plug into a stage without linking:

    transcribe: {"v":1,"op":"transcribe","window_id":N,"sample_rate":R,
                 "pcm_base64":...}        -> {"v":1,"window_id":N,"text":...}
    predict:    {"v":1,"op":"predict","window_id":N,"text":...,"age":...}
                 -> {"v":1,"window_id":N,"entries":[[protocol_id,conf],...]}
    classify:   {"v":1,"op":"classify","frame_id":N,"labels":[...],
                 "image_base64":...}      -> {"v":1,"frame_id":N,
                                              "label":...,"score":...}
"""

from __future__ import annotations

import json
import queue
import socket
import subprocess
import threading
import time
from typing import Optional

from .errors import AdapterProtocolError, AdapterTimeout

_ID_FIELDS = ("window_id", "frame_id")


def _request_id(obj: dict):
    for field in _ID_FIELDS:
        if field in obj:
            return field, obj[field]
    return None, None


class _LineTransportClient:
    """Shared request/response logic over an abstract line transport."""

    def __init__(self):
        self._lock = threading.Lock()

    def _send_line(self, line: str) -> None:
        raise NotImplementedError

    def _recv_line(self, timeout_s: float) -> Optional[str]:
        raise NotImplementedError

    def request(self, obj: dict, timeout_s: float = 3.5) -> dict:
        id_field, id_value = _request_id(obj)
        line = json.dumps(obj, ensure_ascii=False)
        deadline = time.monotonic() + timeout_s
        with self._lock:
            self._send_line(line + "\n")
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise AdapterTimeout(f"no response within {timeout_s}s")
                raw = self._recv_line(remaining)
                if raw is None:
                    raise AdapterTimeout(f"no response within {timeout_s}s")
                if not raw.strip():
                    continue
                try:
                    response = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise AdapterProtocolError(f"bad adapter line: {exc}") from exc
                if not isinstance(response, dict):
                    raise AdapterProtocolError("adapter response must be an object")
                if id_field is not None and response.get(id_field) != id_value:
                    continue  # stale answer from an earlier, timed-out request
                return response


class SocketAdapterClient(_LineTransportClient):
    """Adapter over a TCP stream socket; connects lazily, reconnects never."""

    def __init__(self, host: str, port: int, connect_timeout_s: float = 3.0):
        super().__init__()
        self._address = (host, port)
        self._connect_timeout_s = connect_timeout_s
        self._sock: Optional[socket.socket] = None
        self._reader = None

    def _connect(self) -> None:
        if self._sock is not None:
            return
        try:
            self._sock = socket.create_connection(self._address, timeout=self._connect_timeout_s)
        except OSError as exc:
            raise AdapterProtocolError(f"cannot reach adapter at {self._address}: {exc}") from exc
        self._reader = self._sock.makefile("r", encoding="utf-8")

    def _send_line(self, line: str) -> None:
        self._connect()
        try:
            self._sock.sendall(line.encode("utf-8"))
        except OSError as exc:
            raise AdapterProtocolError(f"adapter connection lost: {exc}") from exc

    def _recv_line(self, timeout_s: float) -> Optional[str]:
        self._sock.settimeout(timeout_s)
        try:
            line = self._reader.readline()
        except socket.timeout:
            return None
        except OSError as exc:
            raise AdapterProtocolError(f"adapter connection lost: {exc}") from exc
        if line == "":
            raise AdapterProtocolError("adapter closed the connection")
        return line

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None


class SubprocessAdapterClient(_LineTransportClient):
    """Adapter as a child process speaking the protocol on stdin/stdout.

    A reader thread decouples the child's output from request deadlines, so
    a slow response surfaces as AdapterTimeout without blocking the stage.
    """

    def __init__(self, argv: list[str]):
        super().__init__()
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, name="adapter-reader", daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def _send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise AdapterProtocolError("adapter process has exited")
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise AdapterProtocolError(f"adapter stdin broken: {exc}") from exc

    def _recv_line(self, timeout_s: float) -> Optional[str]:
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            return None
        if line is None:
            raise AdapterProtocolError("adapter process closed stdout")
        return line

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
