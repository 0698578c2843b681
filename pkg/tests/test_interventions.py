import random

import pytest

from emspipe.errors import EmptyCandidates, UnknownProtocol
from emspipe.interventions import (
    CandidateSet,
    OracleClassifier,
    VisionStats,
    candidate_interventions,
    gate,
    process_window,
)
from emspipe.kb import load_reference_kb
from emspipe.protocols import PredictionEntry, RankedPrediction
from emspipe.wire import VideoFrame

CARDIAC = "medical - chest pain - cardiac suspected (protocol 2 - 1)"
RESP = "medical - respiratory distress/asthma/copd/croup/reactive airway (respiratory distress)"


def ranking(top_id, confidence, window_id=0):
    return RankedPrediction(
        window_id=window_id,
        entries=(PredictionEntry(top_id, confidence), PredictionEntry("zz-other", 0.01)),
        produced_ts_us=0,
    )


def frame(frame_id=0, ts=0):
    return VideoFrame(frame_id=frame_id, capture_ts_us=ts, data=b"jpg")


class TestGate:
    def test_above_threshold(self):
        assert gate(ranking(CARDIAC, 0.91), 0.5) is True

    def test_below_threshold(self):
        assert gate(ranking(CARDIAC, 0.30), 0.5) is False

    def test_zero_threshold_always_open(self):
        assert gate(ranking(CARDIAC, 0.0), 0.0) is True

    def test_empty_ranking_rejected(self):
        empty = RankedPrediction(0, (), 0)
        with pytest.raises(ValueError):
            gate(empty, 0.5)


class TestCandidateInterventions:
    def test_cardiac_labels(self):
        cs = candidate_interventions(load_reference_kb(), CARDIAC)
        assert cs.labels == (
            "Attaching Defibrillator",
            "Inserting IV to arm",
            "Inserting IV to leg",
            "Defibrillator",
        )

    def test_respiratory_labels(self):
        cs = candidate_interventions(load_reference_kb(), RESP)
        assert cs.labels == (
            "Placing Oxygen mask on face",
            "Attaching nebulizer",
            "Inserting airway adjunct",
            "Administering albuterol",
        )

    def test_unknown_protocol(self):
        with pytest.raises(UnknownProtocol):
            candidate_interventions(load_reference_kb(), "no such protocol")

    def test_vision_disabled_protocol(self):
        with pytest.raises(EmptyCandidates):
            candidate_interventions(load_reference_kb(), "medical - syncope (protocol 3-15)")


class TestOracleClassifier:
    CARDIAC_SET = CandidateSet(
        CARDIAC,
        ("Attaching Defibrillator", "Inserting IV to arm", "Inserting IV to leg", "Defibrillator"),
    )

    def test_noiseless_returns_truth_with_full_score(self):
        clf = OracleClassifier(lambda f: "Attaching Defibrillator", epsilon=0.0, seed=1)
        assert clf.classify(frame(), self.CARDIAC_SET) == ("Attaching Defibrillator", 1.0)

    def test_truth_outside_candidates_uniform_seeded(self):
        first = OracleClassifier(lambda f: "CPR", epsilon=0.0, seed=42)
        second = OracleClassifier(lambda f: "CPR", epsilon=0.0, seed=42)
        picks_a = [first.classify(frame(i), self.CARDIAC_SET) for i in range(50)]
        picks_b = [second.classify(frame(i), self.CARDIAC_SET) for i in range(50)]
        assert picks_a == picks_b
        labels = {label for label, _ in picks_a}
        assert labels <= set(self.CARDIAC_SET.labels)
        assert len(labels) > 1
        assert all(score == pytest.approx(0.25) for _, score in picks_a)

    def test_monte_carlo_accuracy_matches_model(self):
        # two candidates, eps=0.5 -> expected accuracy (1-eps)^(k-1) = 0.5
        pair = CandidateSet("p", ("right", "wrong"))
        clf = OracleClassifier(lambda f: "right", epsilon=0.5, seed=7)
        hits = sum(
            clf.classify(frame(i), pair)[0] == "right" for i in range(10_000)
        )
        assert hits / 10_000 == pytest.approx(0.5, abs=0.02)

    def test_accuracy_rises_as_candidate_set_shrinks(self):
        eps = 0.4
        for k, seed in ((4, 1), (8, 1)):
            labels = tuple(f"label-{i}" for i in range(k))
            clf = OracleClassifier(lambda f: "label-0", epsilon=eps, seed=seed)
            cs = CandidateSet("p", labels)
            acc = sum(clf.classify(frame(i), cs)[0] == "label-0" for i in range(5000)) / 5000
            expected = OracleClassifier.expected_accuracy(eps, k)
            assert acc == pytest.approx(expected, abs=0.03)

    def test_epsilon_validated(self):
        with pytest.raises(ValueError):
            OracleClassifier(lambda f: None, epsilon=1.5)


class TestProcessWindow:
    def test_closed_gate_returns_empty_and_no_calls(self):
        kb = load_reference_kb()
        clf = OracleClassifier(lambda f: "Defibrillator", seed=0)
        stats = VisionStats()
        out = process_window(
            [frame(i) for i in range(10)], ranking(CARDIAC, 0.2), kb, 0.5, clf, stats
        )
        assert out == []
        assert clf.calls == 0
        assert stats.windows_gated_closed == 1

    def test_open_gate_one_prediction_per_frame(self):
        kb = load_reference_kb()
        clf = OracleClassifier(lambda f: "Defibrillator", epsilon=0.0, seed=0)
        frames = [frame(i) for i in range(30)]
        out = process_window(frames, ranking(CARDIAC, 0.9, window_id=4), kb, 0.5, clf)
        assert len(out) == 30
        assert clf.calls == 30
        assert all(p.window_id == 4 for p in out)
        assert all(p.label == "Defibrillator" for p in out)

    def test_vision_disabled_protocol_skips_with_reason(self):
        kb = load_reference_kb()
        clf = OracleClassifier(lambda f: None, seed=0)
        stats = VisionStats()
        out = process_window(
            [frame(0)], ranking("medical - syncope (protocol 3-15)", 0.9), kb, 0.5, clf, stats
        )
        assert out == []
        assert clf.calls == 0
        assert stats.windows_skipped_no_candidates == 1
        assert "EmptyCandidates" in stats.skip_reasons[0]

    def test_unknown_protocol_skips_with_reason(self):
        kb = load_reference_kb()
        stats = VisionStats()
        out = process_window(
            [frame(0)], ranking("made-up", 0.9), kb, 0.5, OracleClassifier(lambda f: None), stats
        )
        assert out == []
        assert "UnknownProtocol" in stats.skip_reasons[0]

    def test_emitted_labels_subset_of_candidates(self):
        kb = load_reference_kb()
        rng = random.Random(5)
        truths = list(candidate_interventions(kb, RESP).labels) + ["CPR", None]
        clf = OracleClassifier(lambda f: rng.choice(truths), epsilon=0.3, seed=9)
        out = process_window(
            [frame(i) for i in range(200)], ranking(RESP, 0.8), kb, 0.5, clf
        )
        allowed = set(candidate_interventions(kb, RESP).labels)
        assert {p.label for p in out} <= allowed
