"""Wire formats for the three transport channels.

Audio channel (UDP), one packet per 1024-sample chunk:

    ┌──────────┬─────────┬──────────────────┬────────────────┬─────────────────────┐
    │ "EMSA"   │ seq     │ capture_ts_us    │ sample_count   │ payload             │
    │ 4B       │ u32 BE  │ u64 BE           │ u16 BE         │ 2×count LE int16    │
    └──────────┴─────────┴──────────────────┴────────────────┴─────────────────────┘

Video channel (UDP), encoded frames split into ≤1200-byte fragments:

    ┌──────────┬──────────┬────────────┬────────────┬────────────────┬──────────┐
    │ "EMSV"   │ frame_id │ frag_index │ frag_count │ capture_ts_us  │ payload  │
    │ 4B       │ u32 BE   │ u16 BE     │ u16 BE     │ u64 BE         │ ≤1200B   │
    └──────────┴──────────┴────────────┴────────────┴────────────────┴──────────┘

Feedback channel (TCP): u32 big-endian length prefix followed by a UTF-8 JSON
body. capture_ts_us counts microseconds since the sender's stream epoch (the
first packet of a stream is stamped at or near 0).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .errors import EncodingError, FrameDropped, MalformedPacket

AUDIO_MAGIC = b"EMSA"
VIDEO_MAGIC = b"EMSV"

AUDIO_HEADER = struct.Struct(">4sIQH")  # magic, seq, capture_ts_us, sample_count
VIDEO_HEADER = struct.Struct(">4sIHHQ")  # magic, frame_id, frag_index, frag_count, capture_ts_us
FEEDBACK_PREFIX = struct.Struct(">I")

SAMPLES_PER_PACKET = 1024
SAMPLE_RATE = 16_000
BYTES_PER_SAMPLE = 2
FRAGMENT_PAYLOAD = 1200  # below a 1500-byte MTU minus IP/UDP headers
MAX_FRAGMENTS = 0xFFFF
MAX_FEEDBACK_BODY = 1 << 20  # 1 MiB


@dataclass(frozen=True)
class AudioPacket:
    seq: int
    capture_ts_us: int
    pcm: bytes  # sample_count little-endian signed 16-bit samples

    @property
    def sample_count(self) -> int:
        return len(self.pcm) // BYTES_PER_SAMPLE

    def samples(self) -> tuple:
        """Decode the payload to int16 values (test/debug helper)."""
        return struct.unpack(f"<{self.sample_count}h", self.pcm)


@dataclass(frozen=True)
class VideoFragment:
    frame_id: int
    frag_index: int
    frag_count: int
    capture_ts_us: int
    payload: bytes


@dataclass(frozen=True)
class VideoFrame:
    """A reassembled frame: opaque encoded image bytes plus capture time."""

    frame_id: int
    capture_ts_us: int
    data: bytes


class FeedbackKind(str, Enum):
    PROTOCOL = "protocol"
    INTERVENTION = "intervention"


@dataclass(frozen=True)
class FeedbackMessage:
    kind: FeedbackKind
    window_id: int
    label: str
    confidence: float
    emitted_ts_us: int
    trace: Optional[dict] = field(default=None)  # stage-timestamp snapshot, if known


def _pcm_bytes(samples) -> bytes:
    if isinstance(samples, (bytes, bytearray)):
        return bytes(samples)
    return struct.pack(f"<{len(samples)}h", *samples)


def encode_audio_packet(seq: int, capture_ts_us: int, samples) -> bytes:
    """Serialize one audio chunk.

    ``samples`` is either a sequence of exactly 1024 int16 values or the
    equivalent 2048 bytes of little-endian PCM.
    """
    pcm = _pcm_bytes(samples)
    if len(pcm) != SAMPLES_PER_PACKET * BYTES_PER_SAMPLE:
        raise EncodingError(
            f"audio packet requires {SAMPLES_PER_PACKET} samples, got {len(pcm) // BYTES_PER_SAMPLE}"
        )
    header = AUDIO_HEADER.pack(AUDIO_MAGIC, seq & 0xFFFFFFFF, capture_ts_us, SAMPLES_PER_PACKET)
    return header + pcm


def decode_audio_packet(data: bytes) -> AudioPacket:
    """Parse bytes from the audio channel; any inconsistency raises MalformedPacket."""
    if len(data) < AUDIO_HEADER.size:
        raise MalformedPacket(f"audio packet shorter than header ({len(data)} bytes)")
    magic, seq, ts, count = AUDIO_HEADER.unpack_from(data)
    if magic != AUDIO_MAGIC:
        raise MalformedPacket(f"bad audio magic {magic!r}")
    expected = AUDIO_HEADER.size + count * BYTES_PER_SAMPLE
    if len(data) != expected:
        raise MalformedPacket(f"audio packet length {len(data)} != declared {expected}")
    return AudioPacket(seq=seq, capture_ts_us=ts, pcm=data[AUDIO_HEADER.size:])


def fragment_frame(frame_id: int, capture_ts_us: int, image_bytes: bytes) -> list[VideoFragment]:
    """Split an encoded frame into ≤1200-byte fragments covering it exactly."""
    if not image_bytes:
        raise EncodingError("cannot fragment an empty frame")
    count = (len(image_bytes) + FRAGMENT_PAYLOAD - 1) // FRAGMENT_PAYLOAD
    if count > MAX_FRAGMENTS:
        raise EncodingError(f"frame needs {count} fragments, max is {MAX_FRAGMENTS}")
    return [
        VideoFragment(
            frame_id=frame_id,
            frag_index=i,
            frag_count=count,
            capture_ts_us=capture_ts_us,
            payload=image_bytes[i * FRAGMENT_PAYLOAD:(i + 1) * FRAGMENT_PAYLOAD],
        )
        for i in range(count)
    ]


def encode_video_fragment(frag: VideoFragment) -> bytes:
    if not 0 <= frag.frag_index < frag.frag_count:
        raise EncodingError(f"frag_index {frag.frag_index} outside frag_count {frag.frag_count}")
    if len(frag.payload) > FRAGMENT_PAYLOAD:
        raise EncodingError(f"fragment payload {len(frag.payload)} exceeds {FRAGMENT_PAYLOAD}")
    header = VIDEO_HEADER.pack(
        VIDEO_MAGIC, frag.frame_id, frag.frag_index, frag.frag_count, frag.capture_ts_us
    )
    return header + frag.payload


def decode_video_fragment(data: bytes) -> VideoFragment:
    if len(data) < VIDEO_HEADER.size:
        raise MalformedPacket(f"video fragment shorter than header ({len(data)} bytes)")
    magic, frame_id, index, count, ts = VIDEO_HEADER.unpack_from(data)
    if magic != VIDEO_MAGIC:
        raise MalformedPacket(f"bad video magic {magic!r}")
    payload = data[VIDEO_HEADER.size:]
    if index >= count:
        raise MalformedPacket(f"frag_index {index} >= frag_count {count}")
    if len(payload) > FRAGMENT_PAYLOAD:
        raise MalformedPacket(f"fragment payload {len(payload)} exceeds {FRAGMENT_PAYLOAD}")
    return VideoFragment(
        frame_id=frame_id, frag_index=index, frag_count=count, capture_ts_us=ts, payload=payload
    )


def reassemble_frame(fragments: Iterable[VideoFragment]) -> bytes:
    """Rebuild a frame from a complete fragment set.

    Order and duplicates are irrelevant; a missing index raises FrameDropped
    (the streaming path uses FrameAssembler, which adds the arrival timeout).
    """
    by_index: dict[int, VideoFragment] = {}
    frame_id = None
    count = None
    for frag in fragments:
        if frame_id is None:
            frame_id, count = frag.frame_id, frag.frag_count
        elif frag.frame_id != frame_id:
            raise MalformedPacket(f"mixed frame ids {frame_id} and {frag.frame_id}")
        by_index.setdefault(frag.frag_index, frag)
    if frame_id is None or count is None:
        raise FrameDropped("no fragments supplied")
    missing = [i for i in range(count) if i not in by_index]
    if missing:
        raise FrameDropped(f"frame {frame_id} missing fragments {missing}")
    return b"".join(by_index[i].payload for i in range(count))


class FrameAssembler:
    """Collects fragments per frame and discards frames that idle past a timeout.

    Callers push fragments with a monotonic ``now_us``; ``expire`` sweeps out
    frames whose last activity is older than ``timeout_us``.
    """

    def __init__(self, timeout_ms: float = 500.0):
        self.timeout_us = int(timeout_ms * 1000)
        self._partial: dict[int, dict[int, VideoFragment]] = {}
        self._last_activity: dict[int, int] = {}

    def push(self, frag: VideoFragment, now_us: int) -> Optional[VideoFrame]:
        """Insert a fragment; returns the frame when it completes."""
        slot = self._partial.setdefault(frag.frame_id, {})
        slot.setdefault(frag.frag_index, frag)
        self._last_activity[frag.frame_id] = now_us
        if len(slot) == frag.frag_count:
            del self._partial[frag.frame_id]
            del self._last_activity[frag.frame_id]
            data = b"".join(slot[i].payload for i in range(frag.frag_count))
            return VideoFrame(frame_id=frag.frame_id, capture_ts_us=frag.capture_ts_us, data=data)
        return None

    def expire(self, now_us: int) -> list[int]:
        """Drop frames idle past the timeout; returns their frame ids."""
        dead = [fid for fid, ts in self._last_activity.items() if now_us - ts > self.timeout_us]
        for fid in dead:
            del self._partial[fid]
            del self._last_activity[fid]
        return dead

    @property
    def pending(self) -> int:
        return len(self._partial)


def encode_feedback(msg: FeedbackMessage) -> bytes:
    """Frame a feedback message: u32 BE length prefix + JSON body.

    JSON keeps the reliable channel debuggable with tcpdump/netcat; size does
    not matter at feedback rates.
    """
    if not msg.label:
        raise EncodingError("feedback label must be nonempty")
    if not 0.0 <= msg.confidence <= 1.0:
        raise EncodingError(f"confidence {msg.confidence} outside [0, 1]")
    body = json.dumps(
        {
            "v": 1,
            "kind": msg.kind.value,
            "window_id": msg.window_id,
            "label": msg.label,
            "confidence": msg.confidence,
            "emitted_ts_us": msg.emitted_ts_us,
            "trace": msg.trace,
        },
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")
    if len(body) > MAX_FEEDBACK_BODY:
        raise EncodingError(f"feedback body {len(body)} bytes exceeds {MAX_FEEDBACK_BODY}")
    return FEEDBACK_PREFIX.pack(len(body)) + body


def decode_feedback(data: bytes) -> FeedbackMessage:
    if len(data) < FEEDBACK_PREFIX.size:
        raise MalformedPacket("feedback frame shorter than length prefix")
    (length,) = FEEDBACK_PREFIX.unpack_from(data)
    body = data[FEEDBACK_PREFIX.size:]
    if len(body) != length:
        raise MalformedPacket(f"feedback body length {len(body)} != declared {length}")
    try:
        obj = json.loads(body.decode("utf-8"))
        kind = FeedbackKind(obj["kind"])
        msg = FeedbackMessage(
            kind=kind,
            window_id=int(obj["window_id"]),
            label=obj["label"],
            confidence=float(obj["confidence"]),
            emitted_ts_us=int(obj["emitted_ts_us"]),
            trace=obj.get("trace"),
        )
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise MalformedPacket(f"feedback body not decodable: {exc}") from exc
    if not msg.label or not 0.0 <= msg.confidence <= 1.0:
        raise MalformedPacket("feedback violates field constraints")
    return msg


def read_feedback_stream(read) -> Optional[FeedbackMessage]:
    """Read one length-prefixed feedback message from a blocking reader.

    ``read(n)`` must return exactly n bytes or b"" at EOF (socket.makefile-style).
    Returns None on clean EOF before a frame starts.
    """
    prefix = read(FEEDBACK_PREFIX.size)
    if not prefix:
        return None
    if len(prefix) < FEEDBACK_PREFIX.size:
        raise MalformedPacket("feedback stream truncated in length prefix")
    (length,) = FEEDBACK_PREFIX.unpack(prefix)
    if length > MAX_FEEDBACK_BODY:
        raise MalformedPacket(f"feedback length {length} exceeds {MAX_FEEDBACK_BODY}")
    body = read(length)
    if len(body) < length:
        raise MalformedPacket("feedback stream truncated in body")
    return decode_feedback(prefix + body)
