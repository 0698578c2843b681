"""Transcription, multi-label classification and intervention metrics.

* WER/CER: unit-cost token/character edit distance over normalized text,
  divided by the reference length. An empty reference with a nonempty
  hypothesis is defined as the hypothesis length over 1 (keeping the metric
  total); empty/empty is 0. WER can exceed 1 and is never clamped.
* micro F1 pools true/false positives over every label; macro F1 averages
  per-label F1, where a label with no positives and no predictions
  contributes 0.
* top-k accuracy counts an instance as a hit when any ground-truth label
  appears among its k highest-confidence predictions (ties broken by label,
  ascending); an ``all`` mode requiring every truth label is also available.
* intervention accuracy is the fraction of ground-truth-labeled frames
  classified correctly; frames never classified (gated-out windows, skips)
  count as incorrect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .textnorm import Profile, normalize_text


@dataclass(frozen=True)
class LabelInstance:
    """One multi-label example: truth labels and scored predictions."""

    truth: frozenset
    predicted: tuple  # (label, confidence) pairs

    @staticmethod
    def make(truth: Iterable[str], predicted: Iterable[tuple]) -> "LabelInstance":
        return LabelInstance(frozenset(truth), tuple((str(l), float(c)) for l, c in predicted))


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Unit-cost Levenshtein distance, two-row dynamic program."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            current[j] = min(
                previous[j] + 1,  # delete
                current[j - 1] + 1,  # insert
                previous[j - 1] + (r != h),  # substitute
            )
        previous = current
    return previous[-1]


def _rate(ref: Sequence, hyp: Sequence) -> float:
    if not ref:
        return float(len(hyp))
    return edit_distance(ref, hyp) / len(ref)


def wer(reference: str, hypothesis: str, profile: Profile = Profile.STANDARD) -> float:
    """Word error rate over normalized token sequences."""
    ref = normalize_text(reference, profile).split()
    hyp = normalize_text(hypothesis, profile).split()
    return _rate(ref, hyp)


def cer(reference: str, hypothesis: str, profile: Profile = Profile.STANDARD) -> float:
    """Character error rate over normalized text (spaces included)."""
    ref = normalize_text(reference, profile)
    hyp = normalize_text(hypothesis, profile)
    return _rate(ref, hyp)


def _thresholded(instance: LabelInstance, threshold: float) -> set:
    return {label for label, conf in instance.predicted if conf >= threshold}


def micro_f1(instances: Sequence[LabelInstance], threshold: float = 0.5) -> float:
    if not instances:
        raise ValueError("micro_f1 needs at least one instance")
    tp = fp = fn = 0
    for inst in instances:
        predicted = _thresholded(inst, threshold)
        tp += len(predicted & inst.truth)
        fp += len(predicted - inst.truth)
        fn += len(inst.truth - predicted)
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


def macro_f1(
    instances: Sequence[LabelInstance],
    threshold: float = 0.5,
    label_space: Optional[Iterable[str]] = None,
) -> float:
    if not instances:
        raise ValueError("macro_f1 needs at least one instance")
    if label_space is None:
        labels = set()
        for inst in instances:
            labels |= inst.truth
            labels |= {label for label, _ in inst.predicted}
    else:
        labels = set(label_space)
    if not labels:
        return 0.0
    # Exact rational accumulation keeps the average independent of label order.
    total = Fraction(0)
    for label in labels:
        tp = fp = fn = 0
        for inst in instances:
            predicted = label in _thresholded(inst, threshold)
            actual = label in inst.truth
            tp += predicted and actual
            fp += predicted and not actual
            fn += actual and not predicted
        denom = 2 * tp + fp + fn
        if denom:
            total += Fraction(2 * tp, denom)
    return float(total / len(labels))


def top_k_labels(instance: LabelInstance, k: int) -> list:
    ranked = sorted(instance.predicted, key=lambda lc: (-lc[1], lc[0]))
    return [label for label, _ in ranked[:k]]


def acc_at_k(instances: Sequence[LabelInstance], k: int, mode: str = "any") -> float:
    """Top-k accuracy; ``mode`` is "any" (default) or "all"."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode not in ("any", "all"):
        raise ValueError(f"unknown mode {mode!r}")
    if not instances:
        raise ValueError("acc_at_k needs at least one instance")
    hits = 0
    for inst in instances:
        top = set(top_k_labels(inst, k))
        if not inst.truth:
            continue
        if mode == "any":
            hits += bool(inst.truth & top)
        else:
            hits += inst.truth <= top
    return hits / len(instances)


@dataclass
class InterventionAccuracy:
    overall: float
    per_label: dict = field(default_factory=dict)
    correct: int = 0
    total: int = 0


def intervention_accuracy(
    frame_predictions: Mapping[int, str],
    ground_truth: Mapping[int, str],
) -> InterventionAccuracy:
    """Correct-frame ratio over ground-truth-labeled frames.

    ``frame_predictions`` maps frame_id to the predicted label; ground-truth
    frames absent from it (never classified) count as incorrect. Frames
    without ground truth are outside the metric.
    """
    if not ground_truth:
        return InterventionAccuracy(overall=0.0)
    per_label_counts: dict[str, list[int]] = {}
    correct = 0
    for frame_id, truth in ground_truth.items():
        hit = frame_predictions.get(frame_id) == truth
        correct += hit
        bucket = per_label_counts.setdefault(truth, [0, 0])
        bucket[0] += hit
        bucket[1] += 1
    per_label = {label: hits / total for label, (hits, total) in sorted(per_label_counts.items())}
    return InterventionAccuracy(
        overall=correct / len(ground_truth),
        per_label=per_label,
        correct=correct,
        total=len(ground_truth),
    )
