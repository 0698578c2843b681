"""Scenario replay: stands in for the smart-glasses client.

A scenario is a directory::

    scenario.json   manifest (schema below)
    audio.wav       RIFF/WAVE, PCM16 mono 16 kHz
    frames/         numbered image files
    frames/frames.csv   frame_id,timestamp_s,filename

manifest keys: scenario_id, audio, frames_dir, transcript_alignment
([start_s, end_s, text] triples), ground_truth_protocols,
ground_truth_interventions ([start_s, end_s, label] triples), patient_age.

Replay paces audio packets every 1024/16000 s (divided by ``speed``) and
frames at their manifest timestamps, injecting configurable loss, reorder
and jitter on the sender side so gateway counters measure true received
loss. The whole send plan is precomputed from the seed, which makes the
dropped-sequence set reproducible run to run.
"""

from __future__ import annotations

import csv
import json
import random
import socket
import threading
import time
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import ManifestError
from .wire import (
    BYTES_PER_SAMPLE,
    SAMPLE_RATE,
    SAMPLES_PER_PACKET,
    encode_audio_packet,
    encode_video_fragment,
    fragment_frame,
)

CHUNK_BYTES = SAMPLES_PER_PACKET * BYTES_PER_SAMPLE
CHUNK_PERIOD_S = SAMPLES_PER_PACKET / SAMPLE_RATE


@dataclass(frozen=True)
class FrameEntry:
    frame_id: int
    timestamp_s: float
    path: Path


@dataclass
class ScenarioManifest:
    scenario_id: str
    root: Path
    audio_path: Path
    frames: list[FrameEntry]
    transcript_alignment: list[tuple[float, float, str]]
    ground_truth_protocols: list[str]
    ground_truth_interventions: list[tuple[float, float, str]]
    patient_age: Optional[int] = None

    def reference_text(self) -> str:
        return " ".join(text for _, _, text in self.transcript_alignment if text)

    def intervention_at(self, t_s: float) -> Optional[str]:
        for start, end, label in self.ground_truth_interventions:
            if start <= t_s < end:
                return label
        return None

    def frame_truth(self) -> dict[int, str]:
        """Ground-truth label per frame, for frames inside an intervention span."""
        out: dict[int, str] = {}
        for entry in self.frames:
            label = self.intervention_at(entry.timestamp_s)
            if label is not None:
                out[entry.frame_id] = label
        return out

    def truth_lookup(self):
        """Frame-keyed lookup for OracleClassifier."""
        by_id = self.frame_truth()

        def lookup(frame) -> Optional[str]:
            return by_id.get(frame.frame_id)

        return lookup


@dataclass(frozen=True)
class ImpairmentProfile:
    loss_prob: float = 0.0
    reorder_prob: float = 0.0
    jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("loss_prob", "reorder_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")
        if self.jitter_ms < 0:
            raise ValueError("jitter_ms must be nonnegative")


@dataclass
class ReplayReport:
    scenario_id: str
    speed: float
    audio_packets_sent: int = 0
    audio_packets_dropped: int = 0
    dropped_audio_seqs: list[int] = field(default_factory=list)
    frames_sent: int = 0
    fragments_sent: int = 0
    fragments_dropped: int = 0
    send_errors: int = 0
    wall_seconds: float = 0.0


def read_wav_pcm16(path, expect_rate: int = SAMPLE_RATE) -> bytes:
    try:
        with wave.open(str(path), "rb") as wav:
            if wav.getnchannels() != 1:
                raise ManifestError(f"{path}: audio must be mono")
            if wav.getsampwidth() != 2:
                raise ManifestError(f"{path}: audio must be 16-bit PCM")
            if wav.getframerate() != expect_rate:
                raise ManifestError(f"{path}: audio must be {expect_rate} Hz")
            return wav.readframes(wav.getnframes())
    except (OSError, wave.Error) as exc:
        raise ManifestError(f"{path}: {exc}") from exc


def write_wav_pcm16(path, pcm: bytes, rate: int = SAMPLE_RATE) -> None:
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(rate)
        wav.writeframes(pcm)


def load_manifest(scenario_dir) -> ScenarioManifest:
    root = Path(scenario_dir)
    manifest_path = root / "scenario.json"
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"{manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid json: {exc}") from exc

    try:
        audio_path = root / raw["audio"]
        frames_dir = root / raw.get("frames_dir", "frames")
        alignment = [(float(s), float(e), str(t)) for s, e, t in raw.get("transcript_alignment", [])]
        interventions = [
            (float(s), float(e), str(label))
            for s, e, label in raw.get("ground_truth_interventions", [])
        ]
        manifest = ScenarioManifest(
            scenario_id=str(raw.get("scenario_id", root.name)),
            root=root,
            audio_path=audio_path,
            frames=_load_frames(frames_dir),
            transcript_alignment=alignment,
            ground_truth_protocols=[str(p) for p in raw.get("ground_truth_protocols", [])],
            ground_truth_interventions=interventions,
            patient_age=raw.get("patient_age"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{manifest_path}: {exc}") from exc
    if not manifest.audio_path.exists():
        raise ManifestError(f"{manifest.audio_path}: missing audio file")
    return manifest


def _load_frames(frames_dir: Path) -> list[FrameEntry]:
    index = frames_dir / "frames.csv"
    if not index.exists():
        return []
    entries: list[FrameEntry] = []
    try:
        with index.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                entries.append(
                    FrameEntry(
                        frame_id=int(row["frame_id"]),
                        timestamp_s=float(row["timestamp_s"]),
                        path=frames_dir / row["filename"],
                    )
                )
    except (OSError, KeyError, ValueError) as exc:
        raise ManifestError(f"{index}: {exc}") from exc
    return entries


def validate_manifest(manifest: ScenarioManifest) -> list[str]:
    """Invariant check; returns violations (field: rule) instead of raising."""
    violations: list[str] = []
    align = manifest.transcript_alignment
    for i, (start, end, _) in enumerate(align):
        if end <= start:
            violations.append(f"transcript_alignment[{i}]: end must be after start")
    for (s1, e1, _), (s2, _, _) in zip(align, align[1:]):
        if s2 < s1:
            violations.append("transcript_alignment: segments must be time-ordered")
            break
        if s2 < e1:
            violations.append("transcript_alignment: segments must not overlap")
            break
    stamps = [f.timestamp_s for f in manifest.frames]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        violations.append("frames: timestamps must be monotone")
    if manifest.patient_age is not None and manifest.patient_age < 0:
        violations.append("patient_age: must be >= 0")
    for i, (start, end, _) in enumerate(manifest.ground_truth_interventions):
        if end <= start:
            violations.append(f"ground_truth_interventions[{i}]: end must be after start")
    for entry in manifest.frames:
        if not entry.path.exists():
            violations.append(f"frames: missing file {entry.path.name}")
    return violations


@dataclass(frozen=True)
class _PlannedSend:
    payload: bytes
    offset_s: float  # send time relative to replay start (speed applied)
    seq: int  # audio seq or fragment counter, for reporting


def build_audio_plan(
    pcm: bytes, impairment: ImpairmentProfile, speed: float, rng=None
) -> tuple[list[_PlannedSend], list[int], int]:
    """Precompute the audio send plan: (sends, dropped_seqs, total_packets).

    The final partial chunk is zero-padded so the packet count is a pure
    function of the audio length. Draw order is fixed (loss per packet, then
    reorder per adjacent survivor pair, then jitter per send) so one seed
    fully determines the plan.
    """
    rng = rng if rng is not None else random.Random(impairment.seed)
    if len(pcm) % CHUNK_BYTES:
        pcm = pcm + bytes(CHUNK_BYTES - len(pcm) % CHUNK_BYTES)
    total = len(pcm) // CHUNK_BYTES
    dropped = [seq for seq in range(total) if rng.random() < impairment.loss_prob]
    dropped_set = set(dropped)
    survivors = [seq for seq in range(total) if seq not in dropped_set]
    order = list(survivors)
    i = 0
    while i < len(order) - 1:
        if rng.random() < impairment.reorder_prob:
            order[i], order[i + 1] = order[i + 1], order[i]
            i += 2  # the swapped-forward packet keeps its new slot
        else:
            i += 1
    sends: list[_PlannedSend] = []
    for slot, seq in enumerate(order):
        capture_ts_us = seq * SAMPLES_PER_PACKET * 1_000_000 // SAMPLE_RATE
        payload = encode_audio_packet(seq, capture_ts_us, pcm[seq * CHUNK_BYTES:(seq + 1) * CHUNK_BYTES])
        jitter_s = rng.uniform(0, impairment.jitter_ms / 1000.0) if impairment.jitter_ms else 0.0
        offset = slot * CHUNK_PERIOD_S / speed + jitter_s
        sends.append(_PlannedSend(payload=payload, offset_s=offset, seq=seq))
    return sends, dropped, total


def build_video_plan(
    frames: Sequence[tuple[FrameEntry, bytes]], impairment: ImpairmentProfile, speed: float, rng=None
) -> tuple[list[_PlannedSend], int, int]:
    """Precompute the video send plan: (sends, fragments_dropped, fragments_total)."""
    rng = rng if rng is not None else random.Random(impairment.seed ^ 0x56494445)
    sends: list[_PlannedSend] = []
    dropped = 0
    total = 0
    counter = 0
    for entry, data in frames:
        capture_ts_us = int(entry.timestamp_s * 1_000_000)
        base_offset = entry.timestamp_s / speed
        fragments = fragment_frame(entry.frame_id, capture_ts_us, data)
        planned: list[_PlannedSend] = []
        for frag in fragments:
            total += 1
            counter += 1
            if rng.random() < impairment.loss_prob:
                dropped += 1
                continue
            jitter_s = rng.uniform(0, impairment.jitter_ms / 1000.0) if impairment.jitter_ms else 0.0
            planned.append(
                _PlannedSend(payload=encode_video_fragment(frag), offset_s=base_offset + jitter_s, seq=counter)
            )
        i = 0
        while i < len(planned) - 1:
            if rng.random() < impairment.reorder_prob:
                planned[i], planned[i + 1] = planned[i + 1], planned[i]
                i += 2
            else:
                i += 1
        sends.extend(planned)
    return sends, dropped, total


def _pace_and_send(sock: socket.socket, address, sends: Sequence[_PlannedSend], t0: float) -> int:
    errors = 0
    for item in sends:
        delay = t0 + item.offset_s - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        try:
            sock.sendto(item.payload, address)
        except OSError:
            errors += 1
    return errors


def replay_scenario(
    manifest: ScenarioManifest,
    gateway_host: str,
    audio_port: int,
    video_port: int,
    impairment: ImpairmentProfile = ImpairmentProfile(),
    speed: float = 1.0,
) -> ReplayReport:
    """Stream one scenario to the gateway at ``speed`` times real time."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    pcm = read_wav_pcm16(manifest.audio_path)
    audio_sends, dropped_seqs, _total = build_audio_plan(pcm, impairment, speed)
    frames: list[tuple[FrameEntry, bytes]] = []
    for entry in manifest.frames:
        try:
            frames.append((entry, entry.path.read_bytes()))
        except OSError as exc:
            raise ManifestError(f"{entry.path}: {exc}") from exc
    video_sends, frags_dropped, _frags_total = build_video_plan(frames, impairment, speed)

    report = ReplayReport(scenario_id=manifest.scenario_id, speed=speed)
    report.audio_packets_dropped = len(dropped_seqs)
    report.dropped_audio_seqs = dropped_seqs
    report.fragments_dropped = frags_dropped

    audio_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    video_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    errors = [0, 0]
    t0 = time.monotonic()
    audio_worker = threading.Thread(
        target=lambda: errors.__setitem__(
            0, _pace_and_send(audio_sock, (gateway_host, audio_port), audio_sends, t0)
        ),
        name="replay-audio",
    )
    video_worker = threading.Thread(
        target=lambda: errors.__setitem__(
            1, _pace_and_send(video_sock, (gateway_host, video_port), video_sends, t0)
        ),
        name="replay-video",
    )
    audio_worker.start()
    video_worker.start()
    audio_worker.join()
    video_worker.join()
    audio_sock.close()
    video_sock.close()

    report.wall_seconds = time.monotonic() - t0
    report.audio_packets_sent = len(audio_sends)
    report.fragments_sent = len(video_sends)
    report.frames_sent = len(frames)
    report.send_errors = errors[0] + errors[1]
    return report


def replay_batch(
    scenario_dirs: Sequence,
    gateway_host: str,
    audio_port: int,
    video_port: int,
    impairment: ImpairmentProfile = ImpairmentProfile(),
    speed: float = 1.0,
) -> list[ReplayReport]:
    """Replay several scenarios back to back, one report each."""
    return [
        replay_scenario(load_manifest(d), gateway_host, audio_port, video_port, impairment, speed)
        for d in scenario_dirs
    ]
