import json

import pytest

from emspipe.evalrun import default_stage_factory, run_eval
from emspipe.kb import load_reference_kb
from emspipe.pipeline import PipelineSettings

from scenario_fixtures import build_batch, build_scenario


@pytest.fixture(scope="module")
def kb():
    return load_reference_kb()


@pytest.fixture(scope="module")
def batch(tmp_path_factory):
    return build_batch(tmp_path_factory.mktemp("scenarios"), count=8, duration_s=12.0)


class TestRunEval:
    def test_eight_scenarios_with_oracle_components(self, batch, kb, tmp_path):
        report = run_eval(batch, kb, out_dir=tmp_path / "out")
        assert len(report.per_scenario) == 8
        # replay transcriber reproduces references, oracle classifier is noiseless
        assert report.wer == 0.0
        assert report.cer == 0.0
        assert report.intervention_accuracy == 1.0
        assert report.acc_at_k[1] == 1.0
        assert report.acc_at_k[3] == 1.0
        assert report.micro_f1 is not None and report.micro_f1 > 0.0

    def test_report_includes_acc1_and_acc3_columns(self, batch, kb, tmp_path):
        out = tmp_path / "cols"
        run_eval(batch[:2], kb, out_dir=out)
        perf = (out / "performance.csv").read_text().splitlines()
        assert "acc_at_1" in perf[0] and "acc_at_3" in perf[0]
        report = json.loads((out / "report.json").read_text())
        assert set(report["acc_at_k"]) == {"1", "3"}
        latency = (out / "latency.csv").read_text().splitlines()
        assert "protocol_feedback_p95_ms" in latency[0]
        assert len(latency) == 3  # header + 2 scenarios

    def test_noise_rate_drives_accuracy_down(self, batch, kb):
        settings = PipelineSettings()
        noisy = run_eval(
            batch, kb, settings=settings,
            stage_factory=default_stage_factory(settings, epsilon=0.25, seed=11),
        )
        clean = run_eval(batch, kb, settings=settings)
        assert clean.intervention_accuracy == 1.0
        assert noisy.intervention_accuracy < 1.0
        # candidate sets have 4 labels: expected hit rate (1-eps)^3
        expected = (1 - 0.25) ** 3
        assert noisy.intervention_accuracy == pytest.approx(expected, abs=0.05)

    def test_missing_ground_truth_is_not_applicable(self, tmp_path, kb):
        scen = build_scenario(tmp_path, scenario_id="no-truth", kind="seizure", duration_s=8.0)
        manifest_path = scen / "scenario.json"
        raw = json.loads(manifest_path.read_text())
        raw["ground_truth_protocols"] = []
        raw["ground_truth_interventions"] = []
        manifest_path.write_text(json.dumps(raw))
        report = run_eval([scen], kb, out_dir=tmp_path / "out")
        assert report.micro_f1 is None
        assert report.intervention_accuracy is None
        assert report.per_scenario[0].acc_at_1 is None
        perf = (tmp_path / "out" / "performance.csv").read_text()
        assert "n/a" in perf

    def test_byte_identical_reports_across_runs(self, batch, kb, tmp_path):
        settings = PipelineSettings()
        for name in ("r1", "r2"):
            run_eval(
                batch, kb, settings=settings, out_dir=tmp_path / name,
                stage_factory=default_stage_factory(settings, epsilon=0.3, seed=123),
            )
        for fname in ("report.json", "performance.csv", "latency.csv"):
            assert (tmp_path / "r1" / fname).read_bytes() == (tmp_path / "r2" / fname).read_bytes()

    def test_parallel_mode_matches_sequential(self, batch, kb):
        sequential = run_eval(batch, kb)
        parallel = run_eval(batch, kb, parallel=True)
        assert sequential.to_dict() == parallel.to_dict()

    def test_invalid_scenario_rejected(self, tmp_path, kb):
        scen = build_scenario(tmp_path, scenario_id="bad", duration_s=8.0)
        raw = json.loads((scen / "scenario.json").read_text())
        raw["transcript_alignment"] = [[0.0, 5.0, "a"], [4.0, 9.0, "b"]]
        (scen / "scenario.json").write_text(json.dumps(raw))
        with pytest.raises(ValueError):
            run_eval([scen], kb)
