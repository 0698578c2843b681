"""The concurrent window pipeline and its deterministic offline twin.

Live mode wires one worker per stage (chunker, speech recognition, protocol
ranking, vision, feedback sender) connected by bounded queues, fed from a
Gateway, timed on the process monotonic clock. Audio-path queues block
(audio is never dropped by the pipeline); the vision path drops oldest.

Offline mode drives the identical stage implementations synchronously over a
scenario manifest with a virtual clock, which makes run artifacts
byte-for-byte reproducible: failure injection, seeds and configuration
fully determine every output file. Evaluation and determinism checks use
this mode; latency, soak and transport behavior use live mode.
"""

from __future__ import annotations

import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .artifacts import RunWriter
from .audio import DEFAULT_WINDOW_SAMPLES, AudioWindow, TranscriptSegment, WindowAccumulator
from .errors import PipelineError
from .feedback import PriorityFeedbackQueue
from .gateway import Gateway
from .interventions import InterventionPrediction, VisionStats, process_window
from .kb import KnowledgeBase
from .protocols import IncidentState, RankedPrediction, accumulate
from .simulator import ScenarioManifest, read_wav_pcm16
from .tracing import DEFAULT_SLO_TARGET_US, LatencyTrace, SloReport, finalize_slo
from .wire import (
    SAMPLE_RATE,
    SAMPLES_PER_PACKET,
    AudioPacket,
    FeedbackKind,
    FeedbackMessage,
    VideoFrame,
)

_POISON = None


@dataclass
class PipelineSettings:
    window_samples: int = DEFAULT_WINDOW_SAMPLES
    sample_rate: int = SAMPLE_RATE
    gate_threshold: float = 0.5
    slo_target_us: int = DEFAULT_SLO_TARGET_US
    asr_delay_s: float = 0.0  # artificial engine delay, for latency tests
    frame_buffer_size: int = 64
    stage_queue_size: int = 8

    @property
    def window_us(self) -> int:
        return self.window_samples * 1_000_000 // self.sample_rate


@dataclass
class RunArtifacts:
    traces: list[LatencyTrace] = field(default_factory=list)
    slo_report: Optional[SloReport] = None
    transcripts: list[TranscriptSegment] = field(default_factory=list)
    predictions: list[RankedPrediction] = field(default_factory=list)
    interventions: list[InterventionPrediction] = field(default_factory=list)
    protocol_feedbacks: list[FeedbackMessage] = field(default_factory=list)
    intervention_feedbacks: list[FeedbackMessage] = field(default_factory=list)
    vision_stats: VisionStats = field(default_factory=VisionStats)
    counters: dict = field(default_factory=dict)
    run_dir: Optional[str] = None


def summarize_interventions(preds: list[InterventionPrediction]) -> tuple[str, float]:
    """Fold a window's frame predictions into one feedback label.

    Majority label wins; ties break on higher mean score, then
    lexicographically. Confidence is the winning label's frame share.
    """
    if not preds:
        raise ValueError("no predictions to summarize")
    by_label: dict[str, list[float]] = {}
    for p in preds:
        by_label.setdefault(p.label, []).append(p.score)
    ranked = sorted(
        by_label.items(),
        key=lambda kv: (-len(kv[1]), -(sum(kv[1]) / len(kv[1])), kv[0]),
    )
    label, scores = ranked[0]
    return label, len(scores) / len(preds)


class _TraceBook:
    """Collects per-window stage stamps and flushes complete traces in order."""

    def __init__(self, writer: Optional[RunWriter]):
        self._writer = writer
        self._stamps: dict[int, dict] = {}
        self._vision: dict[int, Optional[int]] = {}
        self._flushed: set[int] = set()
        self._lock = threading.Lock()
        self.traces: list[LatencyTrace] = []

    def stamp(self, window_id: int, **fields: int) -> None:
        with self._lock:
            self._stamps.setdefault(window_id, {}).update(fields)

    def resolve_vision(self, window_id: int, ts_us: Optional[int]) -> None:
        with self._lock:
            self._vision[window_id] = ts_us
        self.try_flush(window_id)

    def snapshot(self, window_id: int) -> dict:
        with self._lock:
            return dict(self._stamps.get(window_id, {}))

    def try_flush(self, window_id: int) -> None:
        required = {
            "t_window_ready",
            "t_asr_start",
            "t_asr_done",
            "t_protocol_done",
            "t_feedback_enqueued",
            "t_feedback_sent",
        }
        with self._lock:
            stamps = self._stamps.get(window_id)
            if (
                stamps is None
                or window_id in self._flushed
                or not required <= set(stamps)
                or window_id not in self._vision
            ):
                return
            trace = LatencyTrace(window_id=window_id, t_vision_done=self._vision[window_id], **stamps)
            self._flushed.add(window_id)
            self.traces.append(trace)
            if self._writer is not None:
                self._writer.append_trace(trace)

    def flush_remaining(self) -> None:
        with self._lock:
            pending = [wid for wid in self._stamps if wid not in self._flushed]
            for wid in sorted(pending):
                self._vision.setdefault(wid, None)
        for wid in sorted(pending):
            self.try_flush(wid)


# ---------------------------------------------------------------------------
# Offline (virtual clock) execution


def run_offline(
    manifest: ScenarioManifest,
    kb: KnowledgeBase,
    transcriber,
    predictor,
    classifier,
    settings: PipelineSettings = PipelineSettings(),
    run_dir=None,
    config_snapshot: Optional[dict] = None,
) -> RunArtifacts:
    """Execute the full pipeline over one scenario with a virtual clock."""
    writer = RunWriter(run_dir) if run_dir is not None else None
    if writer is not None:
        writer.write_config(config_snapshot or {"mode": "offline", "scenario": manifest.scenario_id})
    art = RunArtifacts(run_dir=None if run_dir is None else str(run_dir))

    pcm = read_wav_pcm16(manifest.audio_path, expect_rate=settings.sample_rate)
    acc = WindowAccumulator(settings.window_samples, settings.sample_rate)
    chunk = SAMPLES_PER_PACKET * 2
    if len(pcm) % chunk:
        pcm = pcm + bytes(chunk - len(pcm) % chunk)
    windows: list[AudioWindow] = []
    for seq in range(len(pcm) // chunk):
        ts = seq * SAMPLES_PER_PACKET * 1_000_000 // settings.sample_rate
        windows += acc.push(AudioPacket(seq=seq, capture_ts_us=ts, pcm=pcm[seq * chunk:(seq + 1) * chunk]))

    frames = [
        VideoFrame(frame_id=e.frame_id, capture_ts_us=int(e.timestamp_s * 1_000_000), data=e.path.read_bytes())
        for e in manifest.frames
    ]

    state = IncidentState()
    asr_delay_us = int(settings.asr_delay_s * 1_000_000)
    prev_asr_done = 0
    window_us = settings.window_us
    for window in windows:
        t_ready = (window.window_id + 1) * window_us
        t_asr_start = max(t_ready, prev_asr_done)
        segment = transcriber.transcribe(window, now_us=t_asr_start)
        t_asr_done = t_asr_start + asr_delay_us
        prev_asr_done = t_asr_done
        accumulate(state, segment)
        prediction = predictor.predict(state, window_id=window.window_id, now_us=t_asr_done)
        t_done = t_asr_done

        window_frames = [
            f for f in frames if window.start_ts_us <= f.capture_ts_us < window.start_ts_us + window_us
        ]
        vision_ts: Optional[int] = None
        window_preds: list[InterventionPrediction] = []
        if classifier is not None:
            processed_before = art.vision_stats.windows_processed
            window_preds = process_window(
                window_frames,
                prediction,
                kb,
                settings.gate_threshold,
                classifier,
                stats=art.vision_stats,
                now_us=t_done,
            )
            if art.vision_stats.windows_processed > processed_before:
                vision_ts = t_done

        feedback = FeedbackMessage(
            kind=FeedbackKind.PROTOCOL,
            window_id=window.window_id,
            label=prediction.top.protocol_id,
            confidence=prediction.top.confidence,
            emitted_ts_us=t_done,
        )
        trace = LatencyTrace(
            window_id=window.window_id,
            t_window_ready=t_ready,
            t_asr_start=t_asr_start,
            t_asr_done=t_asr_done,
            t_protocol_done=t_done,
            t_feedback_enqueued=t_done,
            t_feedback_sent=t_done,
            t_vision_done=vision_ts,
        )

        art.transcripts.append(segment)
        art.predictions.append(prediction)
        art.interventions.extend(window_preds)
        art.protocol_feedbacks.append(feedback)
        if window_preds:
            label, share = summarize_interventions(window_preds)
            art.intervention_feedbacks.append(
                FeedbackMessage(
                    kind=FeedbackKind.INTERVENTION,
                    window_id=window.window_id,
                    label=label,
                    confidence=share,
                    emitted_ts_us=t_done,
                )
            )
        art.traces.append(trace)
        if writer is not None:
            writer.append_transcript(segment)
            writer.append_prediction(prediction)
            writer.append_interventions(window_preds)
            writer.append_trace(trace)

    if art.traces:
        art.slo_report = finalize_slo(art.traces, settings.slo_target_us)
        if writer is not None:
            writer.write_slo(art.slo_report)
    art.counters = {
        "windows_completed": len(windows),
        "protocol_feedbacks": len(art.protocol_feedbacks),
        "frames_total": len(frames),
    }
    if writer is not None:
        writer.write_counters(art.counters)
        writer.close()
    return art


# ---------------------------------------------------------------------------
# Live (threaded) execution


class LivePipeline:
    """One worker per stage over bounded queues, fed by a running Gateway."""

    def __init__(
        self,
        gateway: Gateway,
        kb: KnowledgeBase,
        transcriber,
        predictor,
        classifier,
        settings: PipelineSettings = PipelineSettings(),
        run_dir=None,
        config_snapshot: Optional[dict] = None,
    ):
        self._gateway = gateway
        self._kb = kb
        self._transcriber = transcriber
        self._predictor = predictor
        self._classifier = classifier
        self._settings = settings
        self._writer = RunWriter(run_dir) if run_dir is not None else None
        if self._writer is not None:
            self._writer.write_config(config_snapshot or {"mode": "live"})
        self._book = _TraceBook(self._writer)
        self._art = RunArtifacts(run_dir=None if run_dir is None else str(run_dir))

        size = settings.stage_queue_size
        self._window_q: queue.Queue = queue.Queue(maxsize=size)
        self._transcript_q: queue.Queue = queue.Queue(maxsize=size)
        self._vision_q: queue.Queue = queue.Queue(maxsize=size)
        self._feedback_q = PriorityFeedbackQueue()
        self._frame_buffer: deque[VideoFrame] = deque(maxlen=settings.frame_buffer_size)
        self._frame_lock = threading.Lock()

        self._t0 = time.monotonic_ns()
        self._running = False
        self._collect_video = True
        self._threads: list[threading.Thread] = []
        self._errors: list[str] = []
        self._windows_completed = 0
        self._state = IncidentState()
        self._epoch_offset_us: Optional[int] = None

    # -- clock -------------------------------------------------------------

    def now_us(self) -> int:
        return (time.monotonic_ns() - self._t0) // 1000

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "LivePipeline":
        self._running = True
        for name, target in (
            ("pl-chunker", self._chunker_loop),
            ("pl-asr", self._asr_loop),
            ("pl-protocol", self._protocol_loop),
            ("pl-frames", self._frame_collect_loop),
            ("pl-vision", self._vision_loop),
            ("pl-sender", self._sender_loop),
        ):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def wait_for_windows(self, count: int, timeout_s: float) -> bool:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if self._windows_completed >= count:
                return True
            time.sleep(0.02)
        return self._windows_completed >= count

    def stop_and_collect(self, timeout_s: float = 10.0) -> RunArtifacts:
        """Drain in topological order, join workers, finalize artifacts."""
        self._gateway.audio_queue.put(_POISON)
        deadline = time.monotonic() + timeout_s
        for t in self._threads:
            if t.name == "pl-frames":
                continue
            t.join(timeout=max(0.1, deadline - time.monotonic()))
        self._collect_video = False
        for t in self._threads:
            t.join(timeout=max(0.1, deadline - time.monotonic()))
        self._running = False
        self._book.flush_remaining()
        art = self._art
        art.traces = sorted(self._book.traces, key=lambda t: t.window_id)
        if art.traces:
            art.slo_report = finalize_slo(art.traces, self._settings.slo_target_us)
            if self._writer is not None:
                self._writer.write_slo(art.slo_report)
        art.counters = {
            "windows_completed": self._windows_completed,
            "protocol_feedbacks": len(art.protocol_feedbacks),
            "gateway": self._gateway.stats(),
            "epoch_offset_us": self._epoch_offset_us,
        }
        if self._writer is not None:
            self._writer.write_counters(art.counters)
            self._writer.close()
        if self._errors:
            raise PipelineError("; ".join(self._errors))
        return art

    def _fail(self, where: str, exc: Exception) -> None:
        self._errors.append(f"{where}: {type(exc).__name__}: {exc}")

    # -- workers -------------------------------------------------------------

    def _chunker_loop(self) -> None:
        acc = WindowAccumulator(self._settings.window_samples, self._settings.sample_rate)
        try:
            while True:
                packet = self._gateway.audio_queue.get()
                if packet is _POISON:
                    break
                if self._epoch_offset_us is None:
                    self._epoch_offset_us = self.now_us() - packet.capture_ts_us
                for window in acc.push(packet):
                    self._book.stamp(window.window_id, t_window_ready=self.now_us())
                    self._window_q.put(window)
        except Exception as exc:  # noqa: BLE001 - stage crash policy: drain downstream
            self._fail("chunker", exc)
        self._window_q.put(_POISON)

    def _asr_loop(self) -> None:
        try:
            while True:
                window = self._window_q.get()
                if window is _POISON:
                    break
                t_start = self.now_us()
                self._book.stamp(window.window_id, t_asr_start=t_start)
                segment = self._transcriber.transcribe(window, now_us=t_start)
                if self._settings.asr_delay_s > 0:
                    time.sleep(self._settings.asr_delay_s)
                self._book.stamp(window.window_id, t_asr_done=self.now_us())
                self._transcript_q.put((window, segment))
        except Exception as exc:  # noqa: BLE001
            self._fail("asr", exc)
        self._transcript_q.put(_POISON)

    def _protocol_loop(self) -> None:
        try:
            while True:
                item = self._transcript_q.get()
                if item is _POISON:
                    break
                window, segment = item
                accumulate(self._state, segment)
                prediction = self._predictor.predict(
                    self._state, window_id=window.window_id, now_us=self.now_us()
                )
                t_done = self.now_us()
                self._book.stamp(window.window_id, t_protocol_done=t_done)
                msg = FeedbackMessage(
                    kind=FeedbackKind.PROTOCOL,
                    window_id=window.window_id,
                    label=prediction.top.protocol_id,
                    confidence=prediction.top.confidence,
                    emitted_ts_us=t_done,
                    trace=self._book.snapshot(window.window_id),
                )
                self._book.stamp(window.window_id, t_feedback_enqueued=self.now_us())
                self._feedback_q.put(msg)
                self._art.transcripts.append(segment)
                self._art.predictions.append(prediction)
                self._art.protocol_feedbacks.append(msg)
                if self._writer is not None:
                    self._writer.append_transcript(segment)
                    self._writer.append_prediction(prediction)
                self._windows_completed += 1
                self._vision_put((window, prediction))
        except Exception as exc:  # noqa: BLE001
            self._fail("protocol", exc)
        self._vision_q.put(_POISON)

    def _vision_put(self, item) -> None:
        try:
            self._vision_q.put_nowait(item)
        except queue.Full:
            try:
                self._vision_q.get_nowait()  # vision is best effort: drop oldest
            except queue.Empty:
                pass
            try:
                self._vision_q.put_nowait(item)
            except queue.Full:
                pass

    def _frame_collect_loop(self) -> None:
        while self._collect_video:
            try:
                frame = self._gateway.video_queue.get(timeout=0.1)
            except queue.Empty:
                continue
            with self._frame_lock:
                self._frame_buffer.append(frame)

    def _frames_for(self, window: AudioWindow) -> list[VideoFrame]:
        end_us = window.start_ts_us + self._settings.window_us
        with self._frame_lock:
            return [f for f in self._frame_buffer if window.start_ts_us <= f.capture_ts_us < end_us]

    def _vision_loop(self) -> None:
        try:
            while True:
                item = self._vision_q.get()
                if item is _POISON:
                    break
                if self._classifier is None:
                    self._book.resolve_vision(item[0].window_id, None)
                    continue
                window, prediction = item
                frames = self._frames_for(window)
                processed_before = self._art.vision_stats.windows_processed
                preds = process_window(
                    frames,
                    prediction,
                    self._kb,
                    self._settings.gate_threshold,
                    self._classifier,
                    stats=self._art.vision_stats,
                    now_us=self.now_us(),
                )
                ran = self._art.vision_stats.windows_processed > processed_before
                self._book.resolve_vision(window.window_id, self.now_us() if ran else None)
                if preds:
                    self._art.interventions.extend(preds)
                    if self._writer is not None:
                        self._writer.append_interventions(preds)
                    label, share = summarize_interventions(preds)
                    msg = FeedbackMessage(
                        kind=FeedbackKind.INTERVENTION,
                        window_id=window.window_id,
                        label=label,
                        confidence=share,
                        emitted_ts_us=self.now_us(),
                    )
                    self._art.intervention_feedbacks.append(msg)
                    self._feedback_q.put(msg)
        except Exception as exc:  # noqa: BLE001
            self._fail("vision", exc)
        self._feedback_q.close()

    def _sender_loop(self) -> None:
        try:
            while True:
                msg = self._feedback_q.get(timeout=0.2)
                if msg is None:
                    if self._feedback_q.closed and len(self._feedback_q) == 0:
                        break
                    continue
                self._gateway.send_feedback(msg)
                if msg.kind is FeedbackKind.PROTOCOL:
                    self._book.stamp(msg.window_id, t_feedback_sent=self.now_us())
                    self._book.try_flush(msg.window_id)
        except Exception as exc:  # noqa: BLE001
            self._fail("sender", exc)


def run_live_pipeline(
    gateway: Gateway,
    kb: KnowledgeBase,
    transcriber,
    predictor,
    classifier,
    settings: PipelineSettings = PipelineSettings(),
    run_dir=None,
    config_snapshot: Optional[dict] = None,
) -> LivePipeline:
    return LivePipeline(
        gateway, kb, transcriber, predictor, classifier, settings, run_dir, config_snapshot
    ).start()
