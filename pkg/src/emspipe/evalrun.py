"""Scenario evaluation driver: pipeline runs joined with ground truth.

Each scenario executes through the offline pipeline (deterministic, virtual
clock), then its artifacts are scored against the manifest: transcript
error rates, protocol ranking quality at threshold 0.5 plus top-k accuracy,
per-frame intervention accuracy, and per-stage latency percentiles.

Outputs: ``report.json`` plus two CSV tables, ``performance.csv`` (error
rates, micro/macro F1, Acc@1/Acc@3, intervention accuracy) and
``latency.csv`` (per-stage p50/p95/max and means).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .audio import ReplayTranscriber
from .interventions import OracleClassifier
from .kb import KnowledgeBase
from .metrics import (
    LabelInstance,
    acc_at_k,
    cer,
    intervention_accuracy,
    macro_f1,
    micro_f1,
    wer,
)
from .pipeline import PipelineSettings, RunArtifacts, run_offline
from .protocols import BuiltinPredictor
from .simulator import ScenarioManifest, load_manifest, validate_manifest
from .textnorm import Profile
from .tracing import nearest_rank

LATENCY_STAGES = ("asr", "protocol", "vision", "protocol_feedback")


@dataclass
class ScenarioResult:
    scenario_id: str
    wer: Optional[float]
    cer: Optional[float]
    acc_at_1: Optional[float]
    acc_at_3: Optional[float]
    intervention_accuracy: Optional[float]
    windows: int
    slo_violations: int
    stage_latencies_us: dict
    instance: Optional[LabelInstance]
    frame_predictions: dict
    frame_truth: dict


@dataclass
class MetricReport:
    wer: Optional[float]
    cer: Optional[float]
    micro_f1: Optional[float]
    macro_f1: Optional[float]
    acc_at_k: dict
    intervention_accuracy: Optional[float]
    per_scenario: list[ScenarioResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "wer": self.wer,
            "cer": self.cer,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "acc_at_k": {str(k): v for k, v in sorted(self.acc_at_k.items())},
            "intervention_accuracy": self.intervention_accuracy,
            "per_scenario": [
                {
                    "scenario_id": s.scenario_id,
                    "wer": s.wer,
                    "cer": s.cer,
                    "acc_at_1": s.acc_at_1,
                    "acc_at_3": s.acc_at_3,
                    "intervention_accuracy": s.intervention_accuracy,
                    "windows": s.windows,
                    "slo_violations": s.slo_violations,
                }
                for s in self.per_scenario
            ],
        }


def default_stage_factory(settings: PipelineSettings, epsilon: float = 0.0, seed: int = 0):
    """Replay transcriber + built-in ranker + oracle classifier per scenario."""

    def make(manifest: ScenarioManifest, kb: KnowledgeBase):
        return (
            ReplayTranscriber(manifest.transcript_alignment, sample_rate=settings.sample_rate),
            BuiltinPredictor(kb),
            OracleClassifier(manifest.truth_lookup(), epsilon=epsilon, seed=seed),
        )

    return make


def _score_scenario(
    manifest: ScenarioManifest,
    art: RunArtifacts,
    profile: Profile,
) -> ScenarioResult:
    hypothesis = " ".join(s.text for s in art.transcripts if s.text)
    reference = manifest.reference_text()
    wer_value = wer(reference, hypothesis, profile) if reference else None
    cer_value = cer(reference, hypothesis, profile) if reference else None

    instance = None
    acc1 = acc3 = None
    if manifest.ground_truth_protocols and art.predictions:
        final = art.predictions[-1]
        instance = LabelInstance.make(
            manifest.ground_truth_protocols,
            [(e.protocol_id, e.confidence) for e in final.entries],
        )
        acc1 = acc_at_k([instance], 1)
        acc3 = acc_at_k([instance], 3)

    truth = manifest.frame_truth()
    predictions = {p.frame_id: p.label for p in art.interventions}
    int_acc = intervention_accuracy(predictions, truth).overall if truth else None

    stage_lat = {}
    if art.traces:
        per_stage: dict[str, list[int]] = {}
        for trace in art.traces:
            for stage, value in trace.stage_durations_us().items():
                per_stage.setdefault(stage, []).append(value)
        for stage, values in per_stage.items():
            stage_lat[stage] = {
                "mean": sum(values) // len(values),
                "p50": nearest_rank(values, 50),
                "p95": nearest_rank(values, 95),
                "max": max(values),
            }

    return ScenarioResult(
        scenario_id=manifest.scenario_id,
        wer=wer_value,
        cer=cer_value,
        acc_at_1=acc1,
        acc_at_3=acc3,
        intervention_accuracy=int_acc,
        windows=art.counters.get("windows_completed", 0),
        slo_violations=len(art.slo_report.violations) if art.slo_report else 0,
        stage_latencies_us=stage_lat,
        instance=instance,
        frame_predictions={(manifest.scenario_id, fid): label for fid, label in predictions.items()},
        frame_truth={(manifest.scenario_id, fid): label for fid, label in truth.items()},
    )


def run_eval(
    scenario_dirs: Sequence,
    kb: KnowledgeBase,
    settings: PipelineSettings = PipelineSettings(),
    out_dir=None,
    profile: Profile = Profile.STANDARD,
    stage_factory: Optional[Callable] = None,
    ks: Sequence[int] = (1, 3),
    acc_mode: str = "any",
    parallel: bool = False,
    run_dirs: bool = False,
) -> MetricReport:
    """Evaluate scenarios end to end; returns (and optionally writes) the report."""
    factory = stage_factory or default_stage_factory(settings)
    manifests = [load_manifest(d) for d in scenario_dirs]
    for manifest in manifests:
        violations = validate_manifest(manifest)
        if violations:
            raise ValueError(f"{manifest.scenario_id}: invalid scenario: {violations[0]}")

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    def execute(manifest: ScenarioManifest) -> ScenarioResult:
        transcriber, predictor, classifier = factory(manifest, kb)
        run_dir = (out_path / f"run_{manifest.scenario_id}") if (out_path and run_dirs) else None
        art = run_offline(manifest, kb, transcriber, predictor, classifier, settings, run_dir=run_dir)
        return _score_scenario(manifest, art, profile)

    if parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(execute, manifests))
    else:
        results = [execute(m) for m in manifests]

    instances = [r.instance for r in results if r.instance is not None]
    label_space = kb.protocol_ids()
    pooled_truth: dict = {}
    pooled_preds: dict = {}
    for r in results:
        pooled_truth.update(r.frame_truth)
        pooled_preds.update(r.frame_predictions)

    wers = [r.wer for r in results if r.wer is not None]
    cers = [r.cer for r in results if r.cer is not None]
    report = MetricReport(
        wer=sum(wers) / len(wers) if wers else None,
        cer=sum(cers) / len(cers) if cers else None,
        micro_f1=micro_f1(instances) if instances else None,
        macro_f1=macro_f1(instances, label_space=label_space) if instances else None,
        acc_at_k={k: acc_at_k(instances, k, mode=acc_mode) for k in ks} if instances else {},
        intervention_accuracy=(
            intervention_accuracy(pooled_preds, pooled_truth).overall if pooled_truth else None
        ),
        per_scenario=results,
    )
    if out_path is not None:
        write_report_files(report, out_path)
    return report


def _fmt(value, places: int = 6) -> str:
    return "n/a" if value is None else f"{value:.{places}f}"


def write_report_files(report: MetricReport, out_dir: Path) -> None:
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )

    perf_lines = ["scenario_id,wer,cer,micro_f1,macro_f1,acc_at_1,acc_at_3,intervention_accuracy"]
    for s in report.per_scenario:
        perf_lines.append(
            ",".join(
                [
                    s.scenario_id,
                    _fmt(s.wer),
                    _fmt(s.cer),
                    "n/a",
                    "n/a",
                    _fmt(s.acc_at_1),
                    _fmt(s.acc_at_3),
                    _fmt(s.intervention_accuracy),
                ]
            )
        )
    perf_lines.append(
        ",".join(
            [
                "overall",
                _fmt(report.wer),
                _fmt(report.cer),
                _fmt(report.micro_f1),
                _fmt(report.macro_f1),
                _fmt(report.acc_at_k.get(1)),
                _fmt(report.acc_at_k.get(3)),
                _fmt(report.intervention_accuracy),
            ]
        )
    )
    (out_dir / "performance.csv").write_text("\n".join(perf_lines) + "\n", encoding="utf-8")

    header = ["scenario_id"]
    for stage in LATENCY_STAGES:
        header += [f"{stage}_mean_ms", f"{stage}_p50_ms", f"{stage}_p95_ms", f"{stage}_max_ms"]
    lat_lines = [",".join(header)]
    for s in report.per_scenario:
        row = [s.scenario_id]
        for stage in LATENCY_STAGES:
            cell = s.stage_latencies_us.get(stage)
            if cell is None:
                row += ["n/a"] * 4
            else:
                row += [f"{cell[key] / 1000:.3f}" for key in ("mean", "p50", "p95", "max")]
        lat_lines.append(",".join(row))
    (out_dir / "latency.csv").write_text("\n".join(lat_lines) + "\n", encoding="utf-8")
