"""Audio window assembly and the transcriber stage contract.

Incoming 1024-sample packets accumulate into fixed-size windows (default
64000 samples = 4.000 s at 16 kHz). Each emitted window holds exactly
``window_samples`` samples; leftovers carry into the next window, so window k
always covers the sample interval [k*W, (k+1)*W).

Sequence gaps are filled with zeros and counted per window in
``gap_samples``. Zero-fill rather than trimming keeps sample index equal to
stream time, which the video path and the alignment lookup rely on.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .errors import AdapterProtocolError, AdapterTimeout
from .wire import BYTES_PER_SAMPLE, SAMPLE_RATE, AudioPacket

DEFAULT_WINDOW_SAMPLES = 64_000


@dataclass(frozen=True)
class AudioWindow:
    window_id: int
    pcm: bytes  # window_samples little-endian int16 samples
    start_ts_us: int  # capture timestamp of the first sample
    end_ts_us: int  # capture timestamp of the last sample
    gap_samples: int  # zero-filled samples substituted for lost packets

    @property
    def sample_count(self) -> int:
        return len(self.pcm) // BYTES_PER_SAMPLE


@dataclass(frozen=True)
class TranscriptSegment:
    window_id: int
    text: str
    transcriber_id: str
    produced_ts_us: int
    timed_out: bool = False


class WindowAccumulator:
    """Builds AudioWindows from in-order packets, zero-filling sequence gaps.

    Packets must arrive with nondecreasing seq; late or duplicate packets are
    discarded (their region was already emitted or zero-filled) and counted.
    seq counts from 0, so packets lost before the first arrival are gaps too;
    the stream epoch is back-projected from the first packet's capture time.
    """

    def __init__(self, window_samples: int = DEFAULT_WINDOW_SAMPLES, sample_rate: int = SAMPLE_RATE):
        if window_samples <= 0:
            raise ValueError("window_samples must be positive")
        self.window_samples = window_samples
        self.sample_rate = sample_rate
        self.epoch_us: Optional[int] = None
        self.late_packets = 0
        self._pending = bytearray()
        self._pending_gaps = bytearray()  # one flag byte per pending sample
        self._next_seq: Optional[int] = None
        self._next_window_id = 0
        self._emitted_samples = 0

    def push(self, packet: AudioPacket) -> list[AudioWindow]:
        """Feed one packet; returns every window it completes (usually 0 or 1)."""
        if self.epoch_us is None:
            self.epoch_us = (
                packet.capture_ts_us - packet.seq * packet.sample_count * 1_000_000 // self.sample_rate
            )
        expected = self._next_seq if self._next_seq is not None else 0
        if packet.seq < expected:
            self.late_packets += 1
            return []
        if packet.seq > expected:
            fill = (packet.seq - expected) * packet.sample_count
            self._pending += bytes(fill * BYTES_PER_SAMPLE)
            self._pending_gaps += b"\x01" * fill
        self._next_seq = packet.seq + 1
        self._pending += packet.pcm
        self._pending_gaps += b"\x00" * packet.sample_count
        return self._drain()

    def _drain(self) -> list[AudioWindow]:
        out = []
        w_bytes = self.window_samples * BYTES_PER_SAMPLE
        while len(self._pending) >= w_bytes:
            pcm = bytes(self._pending[:w_bytes])
            gaps = self._pending_gaps[:self.window_samples]
            del self._pending[:w_bytes]
            del self._pending_gaps[:self.window_samples]
            start_idx = self._emitted_samples
            self._emitted_samples += self.window_samples
            out.append(
                AudioWindow(
                    window_id=self._next_window_id,
                    pcm=pcm,
                    start_ts_us=self._sample_ts(start_idx),
                    end_ts_us=self._sample_ts(start_idx + self.window_samples - 1),
                    gap_samples=sum(gaps),
                )
            )
            self._next_window_id += 1
        return out

    def _sample_ts(self, index: int) -> int:
        assert self.epoch_us is not None
        return self.epoch_us + index * 1_000_000 // self.sample_rate

    @property
    def pending_samples(self) -> int:
        return len(self._pending) // BYTES_PER_SAMPLE

    @property
    def windows_emitted(self) -> int:
        return self._next_window_id


class Transcriber(Protocol):
    """Stage contract: exactly one TranscriptSegment per window."""

    transcriber_id: str

    def transcribe(self, window: AudioWindow, now_us: int) -> TranscriptSegment: ...


class NullTranscriber:
    """Always returns empty text; useful for latency-only runs."""

    transcriber_id = "null"

    def transcribe(self, window: AudioWindow, now_us: int) -> TranscriptSegment:
        return TranscriptSegment(window.window_id, "", self.transcriber_id, now_us)


class ReplayTranscriber:
    """Returns scripted text from a scenario's transcript alignment.

    A window picks up every alignment segment whose [start, end) interval
    overlaps the window's capture interval, joined by single spaces in time
    order. Capture timestamps count from the stream epoch, so they map
    directly onto alignment seconds.
    """

    transcriber_id = "replay"

    def __init__(self, alignment: Sequence[tuple[float, float, str]], sample_rate: int = SAMPLE_RATE):
        self._alignment = sorted(alignment, key=lambda seg: seg[0])
        self._rate = sample_rate

    def transcribe(self, window: AudioWindow, now_us: int) -> TranscriptSegment:
        w_start = window.start_ts_us / 1e6
        w_end = w_start + window.sample_count / self._rate
        texts = [
            text
            for start, end, text in self._alignment
            if start < w_end and end > w_start and text
        ]
        return TranscriptSegment(window.window_id, " ".join(texts), self.transcriber_id, now_us)


class AdapterTranscriber:
    """Bridges to an external ASR engine over the line-JSON adapter protocol.

    Request:  {"v": 1, "op": "transcribe", "window_id": N, "sample_rate": R,
               "pcm_base64": "..."}
    Response: {"v": 1, "window_id": N, "text": "..."}

    A timeout or protocol error yields an empty segment with ``timed_out``
    set; the pipeline keeps going.
    """

    transcriber_id = "adapter"

    def __init__(self, client, timeout_s: float = 3.5, sample_rate: int = SAMPLE_RATE):
        self._client = client
        self._timeout_s = timeout_s
        self._rate = sample_rate

    def transcribe(self, window: AudioWindow, now_us: int) -> TranscriptSegment:
        request = {
            "v": 1,
            "op": "transcribe",
            "window_id": window.window_id,
            "sample_rate": self._rate,
            "pcm_base64": base64.b64encode(window.pcm).decode("ascii"),
        }
        try:
            response = self._client.request(request, timeout_s=self._timeout_s)
            text = str(response["text"])
        except (AdapterTimeout, AdapterProtocolError, KeyError):
            return TranscriptSegment(window.window_id, "", self.transcriber_id, now_us, timed_out=True)
        return TranscriptSegment(window.window_id, text, self.transcriber_id, now_us)


def make_transcriber(
    kind: str,
    alignment: Optional[Sequence[tuple[float, float, str]]] = None,
    adapter_client=None,
    adapter_timeout_s: float = 3.5,
    sample_rate: int = SAMPLE_RATE,
):
    if kind == "null":
        return NullTranscriber()
    if kind == "replay":
        return ReplayTranscriber(alignment or [], sample_rate=sample_rate)
    if kind == "adapter":
        if adapter_client is None:
            raise ValueError("adapter transcriber needs a client")
        return AdapterTranscriber(adapter_client, timeout_s=adapter_timeout_s, sample_rate=sample_rate)
    raise ValueError(f"unknown transcriber kind {kind!r}")
