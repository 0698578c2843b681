"""Run-directory artifact files, appended and flushed per window.

Layout (all columns stable):

    config.json        effective configuration + clock offset
    transcripts.txt    window_id<TAB>transcriber<TAB>timed_out<TAB>text
    predictions.csv    window_id,rank,protocol_id,confidence,low_information
    interventions.csv  window_id,frame_id,label,score
    traces.csv         window_id,t_window_ready,t_asr_start,t_asr_done,
                       t_protocol_done,t_feedback_enqueued,t_feedback_sent,
                       t_vision_done
    slo.json           target, per-window latencies, violations, percentiles
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from .audio import TranscriptSegment
from .interventions import InterventionPrediction
from .protocols import RankedPrediction
from .tracing import LatencyTrace, SloReport

TRACE_COLUMNS = [
    "window_id",
    "t_window_ready",
    "t_asr_start",
    "t_asr_done",
    "t_protocol_done",
    "t_feedback_enqueued",
    "t_feedback_sent",
    "t_vision_done",
]


class RunWriter:
    """Append-only writers over one run directory; flushes after every row."""

    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._transcripts = (self.run_dir / "transcripts.txt").open("w", encoding="utf-8")
        self._predictions_file = (self.run_dir / "predictions.csv").open("w", newline="", encoding="utf-8")
        self._predictions = csv.writer(self._predictions_file)
        self._predictions.writerow(["window_id", "rank", "protocol_id", "confidence", "low_information"])
        self._interventions_file = (self.run_dir / "interventions.csv").open("w", newline="", encoding="utf-8")
        self._interventions = csv.writer(self._interventions_file)
        self._interventions.writerow(["window_id", "frame_id", "label", "score"])
        self._traces_file = (self.run_dir / "traces.csv").open("w", newline="", encoding="utf-8")
        self._traces = csv.writer(self._traces_file)
        self._traces.writerow(TRACE_COLUMNS)

    def write_config(self, config: dict) -> None:
        path = self.run_dir / "config.json"
        path.write_text(json.dumps(config, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def write_counters(self, counters: dict) -> None:
        """End-of-run bookkeeping: window counts, channel stats, clock offset."""
        path = self.run_dir / "counters.json"
        path.write_text(json.dumps(counters, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def append_transcript(self, seg: TranscriptSegment) -> None:
        text = seg.text.replace("\t", " ").replace("\n", " ")
        self._transcripts.write(f"{seg.window_id}\t{seg.transcriber_id}\t{int(seg.timed_out)}\t{text}\n")
        self._transcripts.flush()

    def append_prediction(self, pred: RankedPrediction) -> None:
        for rank, entry in enumerate(pred.entries, start=1):
            self._predictions.writerow(
                [pred.window_id, rank, entry.protocol_id, f"{entry.confidence:.9f}", int(pred.low_information)]
            )
        self._predictions_file.flush()

    def append_interventions(self, preds: list[InterventionPrediction]) -> None:
        for p in preds:
            self._interventions.writerow([p.window_id, p.frame_id, p.label, f"{p.score:.9f}"])
        self._interventions_file.flush()

    def append_trace(self, trace: LatencyTrace) -> None:
        self._traces.writerow(
            [
                trace.window_id,
                trace.t_window_ready,
                trace.t_asr_start,
                trace.t_asr_done,
                trace.t_protocol_done,
                trace.t_feedback_enqueued,
                trace.t_feedback_sent,
                "" if trace.t_vision_done is None else trace.t_vision_done,
            ]
        )
        self._traces_file.flush()

    def write_slo(self, report: SloReport) -> None:
        path = self.run_dir / "slo.json"
        path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def close(self) -> None:
        for fh in (self._transcripts, self._predictions_file, self._interventions_file, self._traces_file):
            try:
                fh.close()
            except OSError:
                pass


def read_traces(run_dir) -> list[LatencyTrace]:
    path = Path(run_dir) / "traces.csv"
    out: list[LatencyTrace] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                LatencyTrace(
                    window_id=int(row["window_id"]),
                    t_window_ready=int(row["t_window_ready"]),
                    t_asr_start=int(row["t_asr_start"]),
                    t_asr_done=int(row["t_asr_done"]),
                    t_protocol_done=int(row["t_protocol_done"]),
                    t_feedback_enqueued=int(row["t_feedback_enqueued"]),
                    t_feedback_sent=int(row["t_feedback_sent"]),
                    t_vision_done=int(row["t_vision_done"]) if row["t_vision_done"] else None,
                )
            )
    return out


def read_run_bytes(run_dir) -> dict[str, bytes]:
    """Every artifact file's raw bytes, keyed by filename (determinism checks)."""
    root = Path(run_dir)
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}
