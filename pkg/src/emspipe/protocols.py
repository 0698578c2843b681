"""Incident-transcript accumulation and protocol scoring.

The built-in scorer is deliberately deterministic and lexical: each coarse
scoring unit (an adult/pediatric group, or an ungrouped protocol) scores the
sum over its symptom/medication/procedure terms of

    idf(term) * occurrences(term, accumulated_text)

with idf(term) = 1 + ln(unit_count / unit_frequency(term)), matched
case-insensitively as whole words (multiword terms as contiguous phrases)
after standard normalization. Raw scores are min-max scaled across the
ranking and squashed to confidences with sigmoid(a * (scaled - b)).

A neural model can replace this behind the same contract via
AdapterPredictor; group refinement and accumulation stay host-side.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .audio import TranscriptSegment
from .errors import AdapterProtocolError, AdapterTimeout, DuplicateSegment
from .kb import KnowledgeBase
from .textnorm import Profile, normalize_text

# Age surface patterns, first match by position wins; values above MAX_AGE
# are treated as non-matches (e.g. "age 250" in an address).
MAX_AGE = 130
_AGE_RE = re.compile(
    r"\b(?:(\d{1,3})[ -]years?[ -]old\b|(\d{1,3})\s*yo\b|age\s+(\d{1,3})\b)",
    re.IGNORECASE,
)

PEDIATRIC_MAX_AGE = 18


@dataclass
class IncidentState:
    accumulated_text: str = ""
    segments_seen: int = 0
    extracted_age: Optional[int] = None
    _window_ids: set = field(default_factory=set, repr=False)


@dataclass(frozen=True)
class PredictionEntry:
    protocol_id: str
    confidence: float


@dataclass(frozen=True)
class RankedPrediction:
    window_id: int
    entries: tuple[PredictionEntry, ...]  # descending confidence, id-lexicographic ties
    produced_ts_us: int
    low_information: bool = False

    @property
    def top(self) -> PredictionEntry:
        return self.entries[0]


@dataclass(frozen=True)
class ScorerConfig:
    sigmoid_a: float = 4.0
    sigmoid_b: float = 0.5


def extract_age(text: str) -> Optional[int]:
    """First age mention in the text, None when nothing matches."""
    for m in _AGE_RE.finditer(text):
        value = int(next(g for g in m.groups() if g is not None))
        if value <= MAX_AGE:
            return value
    return None


def accumulate(state: IncidentState, segment: TranscriptSegment) -> IncidentState:
    """Append a window's transcript to the incident state (in place).

    Raises DuplicateSegment when the window was already accumulated. Age
    extraction runs on the new text only; the first mention wins.
    """
    if segment.window_id in state._window_ids:
        raise DuplicateSegment(f"window {segment.window_id} already accumulated")
    state._window_ids.add(segment.window_id)
    state.segments_seen += 1
    if segment.text:
        state.accumulated_text = (
            f"{state.accumulated_text} {segment.text}" if state.accumulated_text else segment.text
        )
        if state.extracted_age is None:
            state.extracted_age = extract_age(segment.text)
    return state


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _term_pattern(term: str) -> re.Pattern:
    return re.compile(r"\b" + re.escape(term) + r"\b")


class _UnitIndex:
    """Normalized term pools and idf weights per scoring unit, cached per KB."""

    def __init__(self, kb: KnowledgeBase):
        self.units: list[tuple[str, tuple[str, ...]]] = kb.scoring_units()
        pools: dict[str, list[str]] = {}
        for unit_id, members in self.units:
            normed: list[str] = []
            seen: set[str] = set()
            for term in kb.unit_terms(members):
                term_n = normalize_text(term, Profile.STANDARD)
                if term_n and term_n not in seen:
                    seen.add(term_n)
                    normed.append(term_n)
            pools[unit_id] = normed
        df: dict[str, int] = {}
        for terms in pools.values():
            for term in terms:
                df[term] = df.get(term, 0) + 1
        n = len(self.units)
        self.idf = {term: 1.0 + math.log(n / count) for term, count in df.items()}
        self.pools = pools
        self.patterns = {term: _term_pattern(term) for term in df}


# Holding the KB reference keeps id() stable while the entry lives.
_INDEX_CACHE: list = []  # [kb, index]


def _unit_index(kb: KnowledgeBase) -> _UnitIndex:
    if _INDEX_CACHE and _INDEX_CACHE[0] is kb:
        return _INDEX_CACHE[1]
    index = _UnitIndex(kb)
    _INDEX_CACHE[:] = [kb, index]
    return index


def raw_scores(state: IncidentState, kb: KnowledgeBase) -> dict[str, float]:
    """Raw idf-weighted match score per coarse unit (exposed for tests/tools)."""
    index = _unit_index(kb)
    text = normalize_text(state.accumulated_text, Profile.STANDARD)
    counts = {
        term: len(index.patterns[term].findall(text)) if text else 0
        for term in index.idf
    }
    return {
        unit_id: sum(index.idf[t] * counts[t] for t in index.pools[unit_id])
        for unit_id, _ in index.units
    }


def predict(
    state: IncidentState,
    kb: KnowledgeBase,
    config: ScorerConfig = ScorerConfig(),
    window_id: int = 0,
    now_us: int = 0,
) -> RankedPrediction:
    """Coarse ranking over groups and ungrouped protocols."""
    scores = raw_scores(state, kb)
    low = not normalize_text(state.accumulated_text, Profile.STANDARD)
    lo, hi = min(scores.values()), max(scores.values())
    span = hi - lo
    entries = [
        PredictionEntry(
            protocol_id=unit_id,
            confidence=_sigmoid(config.sigmoid_a * (((raw - lo) / span if span else 0.0) - config.sigmoid_b)),
        )
        for unit_id, raw in scores.items()
    ]
    entries.sort(key=lambda e: (-e.confidence, e.protocol_id))
    return RankedPrediction(
        window_id=window_id,
        entries=tuple(entries),
        produced_ts_us=now_us,
        low_information=low,
    )


def refine(prediction: RankedPrediction, state: IncidentState, kb: KnowledgeBase) -> RankedPrediction:
    """Resolve group entries to their adult or pediatric member.

    Age ≤ 18 picks the pediatric member; older or unknown ages default to the
    adult member (adult protocols are the base guideline documents).
    Confidences are untouched; entries re-sort only to restore the
    id-lexicographic tie order over the new ids.
    """
    pediatric = state.extracted_age is not None and state.extracted_age <= PEDIATRIC_MAX_AGE
    by_group = {g.group_id: g for g in kb.groups}
    resolved = [
        replace(
            entry,
            protocol_id=(
                (by_group[entry.protocol_id].pediatric if pediatric else by_group[entry.protocol_id].adult)
                if entry.protocol_id in by_group
                else entry.protocol_id
            ),
        )
        for entry in prediction.entries
    ]
    resolved.sort(key=lambda e: (-e.confidence, e.protocol_id))
    return replace(prediction, entries=tuple(resolved))


class BuiltinPredictor:
    """Stage adapter around predict+refine for the pipeline."""

    predictor_id = "builtin"

    def __init__(self, kb: KnowledgeBase, config: ScorerConfig = ScorerConfig()):
        self._kb = kb
        self._config = config

    def predict(self, state: IncidentState, window_id: int, now_us: int) -> RankedPrediction:
        coarse = predict(state, self._kb, self._config, window_id=window_id, now_us=now_us)
        return refine(coarse, state, self._kb)


class AdapterPredictor:
    """External model over the line-JSON adapter protocol.

    Request:  {"v": 1, "op": "predict", "window_id": N, "text": ...,
               "age": N|null}
    Response: {"v": 1, "window_id": N, "entries": [[protocol_id, conf], ...]}

    Entries are re-sorted under the house tie rule; a timeout produces an
    empty-text-equivalent ranking (all-low, flagged) so the pipeline keeps
    its one-prediction-per-window guarantee.
    """

    predictor_id = "adapter"

    def __init__(self, client, kb: KnowledgeBase, timeout_s: float = 3.5,
                 config: ScorerConfig = ScorerConfig()):
        self._client = client
        self._kb = kb
        self._timeout_s = timeout_s
        self._config = config

    def predict(self, state: IncidentState, window_id: int, now_us: int) -> RankedPrediction:
        request = {
            "v": 1,
            "op": "predict",
            "window_id": window_id,
            "text": state.accumulated_text,
            "age": state.extracted_age,
        }
        try:
            response = self._client.request(request, timeout_s=self._timeout_s)
            entries = [
                PredictionEntry(protocol_id=str(pid), confidence=float(conf))
                for pid, conf in response["entries"]
            ]
        except (AdapterTimeout, AdapterProtocolError, KeyError, ValueError, TypeError):
            fallback = predict(IncidentState(), self._kb, self._config, window_id=window_id, now_us=now_us)
            return refine(fallback, IncidentState(), self._kb)
        if any(not 0.0 <= e.confidence <= 1.0 for e in entries):
            raise AdapterProtocolError("adapter confidence outside [0, 1]")
        entries.sort(key=lambda e: (-e.confidence, e.protocol_id))
        coarse = RankedPrediction(window_id=window_id, entries=tuple(entries), produced_ts_us=now_us)
        return refine(coarse, state, self._kb)
