"""Network ingest gateway: two UDP listeners plus the TCP feedback server.

Decoded audio packets are published to ``audio_queue`` in arrival order;
video fragments are reassembled (with a per-frame timeout) and completed
frames land on ``video_queue``. Audio must never be lost downstream, so its
queue blocks when full; video is best effort and drops oldest.

Feedback fans out to every connected TCP client, each message exactly once
per client while its connection lives.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from dataclasses import dataclass

from .errors import MalformedPacket, StartupError
from .wire import (
    FeedbackMessage,
    FrameAssembler,
    decode_audio_packet,
    decode_video_fragment,
    encode_feedback,
)

_RECV_SIZE = 65535


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    audio_port: int = 0  # 0 picks an ephemeral port
    video_port: int = 0
    feedback_port: int = 0
    audio_queue_size: int = 1024
    video_queue_size: int = 64
    frame_timeout_ms: float = 500.0
    recv_buffer_bytes: int = 1 << 22


@dataclass
class ChannelStats:
    received: int = 0
    published: int = 0
    malformed: int = 0
    dropped: int = 0  # audio: missing seqs inferred from gaps; video: timed-out frames
    reordered: int = 0
    overflowed: int = 0  # video frames displaced from a full queue

    def snapshot(self) -> dict:
        return dict(self.__dict__)


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class Gateway:
    def __init__(self, config: GatewayConfig = GatewayConfig()):
        self._config = config
        self.audio_queue: queue.Queue = queue.Queue(maxsize=config.audio_queue_size)
        self.video_queue: queue.Queue = queue.Queue(maxsize=config.video_queue_size)
        self.audio_stats = ChannelStats()
        self.video_stats = ChannelStats()
        self._audio_sock: socket.socket | None = None
        self._video_sock: socket.socket | None = None
        self._feedback_sock: socket.socket | None = None
        self._clients: list[socket.socket] = []
        self._clients_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._running = False
        self._next_audio_seq: int | None = None
        self.feedback_messages_sent = 0
        self.feedback_clients_total = 0

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Gateway":
        cfg = self._config
        try:
            self._audio_sock = self._bind_udp(cfg.host, cfg.audio_port)
            self._video_sock = self._bind_udp(cfg.host, cfg.video_port)
            self._feedback_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._feedback_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._feedback_sock.bind((cfg.host, cfg.feedback_port))
            self._feedback_sock.listen(8)
        except OSError as exc:
            self.stop()
            raise StartupError(f"gateway bind failed: {exc}") from exc
        self._running = True
        for name, target in (
            ("gw-audio", self._audio_loop),
            ("gw-video", self._video_loop),
            ("gw-accept", self._accept_loop),
        ):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _bind_udp(self, host: str, port: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, self._config.recv_buffer_bytes)
        sock.bind((host, port))
        sock.settimeout(0.1)
        return sock

    def stop(self) -> None:
        self._running = False
        for sock in (self._audio_sock, self._video_sock, self._feedback_sock):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass
        for t in self._threads:
            t.join(timeout=2.0)
        with self._clients_lock:
            for client in self._clients:
                try:
                    client.close()
                except OSError:
                    pass
            self._clients.clear()

    @property
    def audio_port(self) -> int:
        assert self._audio_sock is not None
        return self._audio_sock.getsockname()[1]

    @property
    def video_port(self) -> int:
        assert self._video_sock is not None
        return self._video_sock.getsockname()[1]

    @property
    def feedback_port(self) -> int:
        assert self._feedback_sock is not None
        return self._feedback_sock.getsockname()[1]

    def stats(self) -> dict:
        return {
            "audio": self.audio_stats.snapshot(),
            "video": self.video_stats.snapshot(),
            "feedback": {
                "clients": len(self._clients),
                "clients_total": self.feedback_clients_total,
                "messages_sent": self.feedback_messages_sent,
            },
        }

    # -- ingest loops ------------------------------------------------------

    def _audio_loop(self) -> None:
        stats = self.audio_stats
        while self._running:
            try:
                data, _ = self._audio_sock.recvfrom(_RECV_SIZE)
            except socket.timeout:
                continue
            except OSError:
                return
            stats.received += 1
            try:
                packet = decode_audio_packet(data)
            except MalformedPacket:
                stats.malformed += 1
                continue
            if self._next_audio_seq is not None:
                if packet.seq > self._next_audio_seq:
                    stats.dropped += packet.seq - self._next_audio_seq
                elif packet.seq < self._next_audio_seq:
                    stats.reordered += 1
            self._next_audio_seq = max(packet.seq + 1, self._next_audio_seq or 0)
            self._publish_blocking(self.audio_queue, packet)
            stats.published += 1

    def _publish_blocking(self, q: queue.Queue, item) -> None:
        while self._running:
            try:
                q.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def _video_loop(self) -> None:
        stats = self.video_stats
        assembler = FrameAssembler(timeout_ms=self._config.frame_timeout_ms)
        last_key = None  # (frame_id, frag_index) of the newest fragment seen
        while self._running:
            try:
                data, _ = self._video_sock.recvfrom(_RECV_SIZE)
            except socket.timeout:
                data = None
            except OSError:
                return
            stats.dropped += len(assembler.expire(_now_us()))
            if data is None:
                continue
            stats.received += 1
            try:
                fragment = decode_video_fragment(data)
            except MalformedPacket:
                stats.malformed += 1
                continue
            key = (fragment.frame_id, fragment.frag_index)
            if last_key is not None and key < last_key:
                stats.reordered += 1
            else:
                last_key = key
            frame = assembler.push(fragment, _now_us())
            if frame is None:
                continue
            try:
                self.video_queue.put_nowait(frame)
            except queue.Full:
                try:
                    self.video_queue.get_nowait()
                    stats.overflowed += 1
                except queue.Empty:
                    pass
                try:
                    self.video_queue.put_nowait(frame)
                except queue.Full:
                    stats.overflowed += 1
                    continue
            stats.published += 1

    # -- feedback fan-out ----------------------------------------------------

    def _accept_loop(self) -> None:
        try:
            self._feedback_sock.settimeout(0.1)
        except OSError:
            return
        while self._running:
            try:
                client, _ = self._feedback_sock.accept()
            except socket.timeout:
                continue
            except (OSError, ValueError):
                return
            client.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._clients_lock:
                self._clients.append(client)
                self.feedback_clients_total += 1

    def send_feedback(self, msg: FeedbackMessage) -> int:
        """Broadcast one message; returns the number of clients it reached."""
        payload = encode_feedback(msg)
        delivered = 0
        with self._clients_lock:
            alive: list[socket.socket] = []
            for client in self._clients:
                try:
                    client.sendall(payload)
                    delivered += 1
                    alive.append(client)
                except OSError:
                    try:
                        client.close()
                    except OSError:
                        pass
            self._clients = alive
        self.feedback_messages_sent += 1
        return delivered


def run_gateway(config: GatewayConfig = GatewayConfig()) -> Gateway:
    """Bind all three channels and start the ingest workers."""
    return Gateway(config).start()
