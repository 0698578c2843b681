"""Confidence-gated intervention recognition over video frames.

The knowledge agent maps the window's top protocol to its candidate
intervention labels; a pluggable classifier labels each frame against that
restricted set. Windows whose top confidence is below the gate threshold are
skipped entirely, so low-information windows cost no vision work.

OracleClassifier stands in for a zero-shot image model using scenario ground
truth plus seeded noise. Noise is per-distractor: every wrong candidate
independently confuses the classifier with probability epsilon, and the
prediction falls on a uniformly random confuser when any fire. Expected
accuracy with k candidates (truth present) is therefore (1-eps)^(k-1), so
shrinking the candidate set genuinely raises accuracy, which is the property
the knowledge gating exists to exploit.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Optional, Sequence

from .errors import AdapterProtocolError, AdapterTimeout, EmptyCandidates, UnknownProtocol
from .kb import KnowledgeBase
from .protocols import RankedPrediction
from .wire import VideoFrame

DEFAULT_GATE_THRESHOLD = 0.5


@dataclass(frozen=True)
class CandidateSet:
    protocol_id: str
    labels: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class InterventionPrediction:
    frame_id: int
    label: str
    score: float
    window_id: int
    produced_ts_us: int


@dataclass
class VisionStats:
    windows_gated_closed: int = 0
    windows_processed: int = 0
    windows_skipped_no_candidates: int = 0
    frames_classified: int = 0
    frames_skipped: int = 0
    skip_reasons: list = field(default_factory=list)


def gate(prediction: RankedPrediction, threshold: float) -> bool:
    """True when the top confidence clears the threshold."""
    if not prediction.entries:
        raise ValueError("gate needs a nonempty ranking")
    return prediction.top.confidence >= threshold


def candidate_interventions(kb: KnowledgeBase, protocol_id: str) -> CandidateSet:
    """The protocol's intervention labels, verbatim and in KB order."""
    if not kb.has_protocol(protocol_id):
        raise UnknownProtocol(protocol_id)
    labels = kb.intervention_labels(protocol_id)
    if not labels:
        raise EmptyCandidates(protocol_id)
    return CandidateSet(protocol_id=protocol_id, labels=tuple(labels))


class OracleClassifier:
    """Ground-truth-backed frame classifier with seeded per-distractor noise.

    ``truth_lookup`` maps a frame to its ground-truth label (None when the
    frame shows no intervention). Truth absent from the candidate set falls
    back to a uniform seeded pick, which is never correct by construction.
    """

    classifier_id = "oracle"

    def __init__(
        self,
        truth_lookup: Callable[[VideoFrame], Optional[str]],
        epsilon: float = 0.0,
        seed: int = 0,
    ):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon {epsilon} outside [0, 1]")
        self._truth_lookup = truth_lookup
        self._epsilon = epsilon
        self._rng = Random(seed)
        self.calls = 0

    def classify(self, frame: VideoFrame, candidates: CandidateSet) -> Optional[tuple[str, float]]:
        if not candidates.labels:
            raise ValueError("classify needs a nonempty candidate set")
        self.calls += 1
        uniform_score = 1.0 / len(candidates)
        truth = self._truth_lookup(frame)
        if truth is None or truth not in candidates.labels:
            return self._rng.choice(candidates.labels), uniform_score
        confusers = [
            label
            for label in candidates.labels
            if label != truth and self._rng.random() < self._epsilon
        ]
        if confusers:
            return self._rng.choice(confusers), uniform_score
        return truth, 1.0

    @staticmethod
    def expected_accuracy(epsilon: float, candidate_count: int) -> float:
        """Analytic hit rate when the truth is in a k-label candidate set."""
        return (1.0 - epsilon) ** (candidate_count - 1)


class AdapterClassifier:
    """External zero-shot model over the line-JSON adapter protocol.

    Request:  {"v": 1, "op": "classify", "frame_id": N,
               "labels": [...], "image_base64": "..."}
    Response: {"v": 1, "frame_id": N, "label": ..., "score": ...}

    Timeouts and protocol garbage skip the frame (None).
    """

    classifier_id = "adapter"

    def __init__(self, client, timeout_s: float = 3.5):
        self._client = client
        self._timeout_s = timeout_s
        self.calls = 0

    def classify(self, frame: VideoFrame, candidates: CandidateSet) -> Optional[tuple[str, float]]:
        self.calls += 1
        request = {
            "v": 1,
            "op": "classify",
            "frame_id": frame.frame_id,
            "labels": list(candidates.labels),
            "image_base64": base64.b64encode(frame.data).decode("ascii"),
        }
        try:
            response = self._client.request(request, timeout_s=self._timeout_s)
            label = str(response["label"])
            score = float(response["score"])
        except (AdapterTimeout, AdapterProtocolError, KeyError, ValueError, TypeError):
            return None
        if label not in candidates.labels or not 0.0 <= score <= 1.0:
            return None
        return label, score


def process_window(
    frames: Sequence[VideoFrame],
    prediction: RankedPrediction,
    kb: KnowledgeBase,
    threshold: float,
    classifier,
    stats: Optional[VisionStats] = None,
    now_us: int = 0,
) -> list[InterventionPrediction]:
    """Classify a window's frames against its top protocol's candidates.

    Returns [] without touching the classifier when the gate is closed or the
    protocol has no vision candidates.
    """
    stats = stats if stats is not None else VisionStats()
    if not gate(prediction, threshold):
        stats.windows_gated_closed += 1
        return []
    try:
        candidates = candidate_interventions(kb, prediction.top.protocol_id)
    except (UnknownProtocol, EmptyCandidates) as exc:
        stats.windows_skipped_no_candidates += 1
        stats.skip_reasons.append(f"window {prediction.window_id}: {type(exc).__name__}")
        return []
    stats.windows_processed += 1
    out: list[InterventionPrediction] = []
    for frame in frames:
        result = classifier.classify(frame, candidates)
        if result is None:
            stats.frames_skipped += 1
            continue
        label, score = result
        stats.frames_classified += 1
        out.append(
            InterventionPrediction(
                frame_id=frame.frame_id,
                label=label,
                score=score,
                window_id=prediction.window_id,
                produced_ts_us=now_us,
            )
        )
    return out
