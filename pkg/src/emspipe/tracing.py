"""Per-window latency traces and the response-time objective report.

The reported latency for a window runs from the start of speech recognition
to the moment its protocol feedback hit the wire
(``t_feedback_sent - t_asr_start``). Audio accumulation time is excluded on
purpose: a full window takes its own duration to exist, and the objective
bounds the processing that happens afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import TraceError

DEFAULT_SLO_TARGET_US = 4_000_000

_ORDERED_FIELDS = (
    "t_window_ready",
    "t_asr_start",
    "t_asr_done",
    "t_protocol_done",
    "t_feedback_enqueued",
    "t_feedback_sent",
)


@dataclass
class LatencyTrace:
    window_id: int
    t_window_ready: int
    t_asr_start: int
    t_asr_done: int
    t_protocol_done: int
    t_feedback_enqueued: int
    t_feedback_sent: int
    t_vision_done: Optional[int] = None

    def validate(self) -> None:
        values = [getattr(self, name) for name in _ORDERED_FIELDS]
        for (a_name, a), (b_name, b) in zip(
            zip(_ORDERED_FIELDS, values), zip(_ORDERED_FIELDS[1:], values[1:])
        ):
            if b < a:
                raise TraceError(self.window_id, f"{b_name} < {a_name}")

    @property
    def protocol_feedback_latency_us(self) -> int:
        return self.t_feedback_sent - self.t_asr_start

    def stage_durations_us(self) -> dict[str, int]:
        out = {
            "asr": self.t_asr_done - self.t_asr_start,
            "protocol": self.t_protocol_done - self.t_asr_done,
            "queue": self.t_feedback_sent - self.t_feedback_enqueued,
            "protocol_feedback": self.protocol_feedback_latency_us,
        }
        if self.t_vision_done is not None:
            out["vision"] = self.t_vision_done - self.t_protocol_done
        return out


def nearest_rank(values: Sequence[int], percentile: float) -> int:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    if not values:
        raise ValueError("percentile of empty sequence")
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class SloReport:
    slo_target_us: int
    latencies_us: dict[int, int]  # window_id -> protocol feedback latency
    violations: list[int]
    stage_percentiles: dict[str, dict[str, int]]

    @property
    def violation_count(self) -> int:
        return len(self.violations)

    def to_dict(self) -> dict:
        return {
            "slo_target_us": self.slo_target_us,
            "latencies_us": {str(k): v for k, v in sorted(self.latencies_us.items())},
            "violations": sorted(self.violations),
            "stage_percentiles": self.stage_percentiles,
        }


def finalize_slo(traces: Sequence[LatencyTrace], target_us: int = DEFAULT_SLO_TARGET_US) -> SloReport:
    """Validate traces and fold them into a report. A window violates the
    objective exactly when its protocol feedback latency exceeds the target.
    """
    if not traces:
        raise ValueError("finalize_slo needs at least one trace")
    latencies: dict[int, int] = {}
    durations: dict[str, list[int]] = {}
    for trace in traces:
        trace.validate()
        latencies[trace.window_id] = trace.protocol_feedback_latency_us
        for stage, value in trace.stage_durations_us().items():
            durations.setdefault(stage, []).append(value)
    violations = [wid for wid, lat in latencies.items() if lat > target_us]
    percentiles = {
        stage: {
            "p50": nearest_rank(values, 50),
            "p95": nearest_rank(values, 95),
            "max": max(values),
        }
        for stage, values in durations.items()
    }
    return SloReport(
        slo_target_us=target_us,
        latencies_us=latencies,
        violations=sorted(violations),
        stage_percentiles=percentiles,
    )
