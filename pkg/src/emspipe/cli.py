"""Single command-line entry point.

Subcommands: ``simulate`` (replay a scenario at a gateway), ``run`` (bind the
gateway and run the live pipeline), ``eval`` (offline scenario evaluation),
``kb-validate`` (check a knowledge-base file), ``metrics`` (standalone metric
calculators). Exit codes: 0 success, 1 configuration/data error, 2 runtime
failure. Errors print one machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .adapters import SocketAdapterClient, SubprocessAdapterClient
from .audio import AdapterTranscriber, NullTranscriber, ReplayTranscriber
from .config import RunConfig, parse_config
from .errors import ConfigError, EmspipeError, ManifestError, SchemaError
from .evalrun import default_stage_factory, run_eval
from .gateway import GatewayConfig, run_gateway
from .interventions import AdapterClassifier, OracleClassifier
from .kb import load_knowledge_base, load_reference_kb
from .metrics import LabelInstance, acc_at_k, cer, macro_f1, micro_f1, wer
from .pipeline import PipelineSettings, run_live_pipeline
from .protocols import AdapterPredictor, BuiltinPredictor, ScorerConfig
from .simulator import ImpairmentProfile, load_manifest, replay_scenario, validate_manifest
from .textnorm import Profile

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _error_line(kind: str, detail: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "detail": detail}) + "\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _profile(name: str) -> Profile:
    return Profile(name)


def _adapter_client(endpoint: str):
    """"host:port" connects a socket; "cmd:<argv...>" spawns a subprocess."""
    if endpoint.startswith("cmd:"):
        return SubprocessAdapterClient(endpoint[4:].split())
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError("adapter", f"expected host:port or cmd:<argv>, got {endpoint!r}")
    return SocketAdapterClient(host, int(port))


def build_stages(config: RunConfig, kb, manifest=None):
    """Assemble (transcriber, predictor, classifier) from a RunConfig."""
    if config.asr == "replay":
        alignment = manifest.transcript_alignment if manifest else []
        transcriber = ReplayTranscriber(alignment, sample_rate=config.sample_rate)
    elif config.asr == "null":
        transcriber = NullTranscriber()
    else:
        if not config.asr_adapter:
            raise ConfigError("asr_adapter", "required when asr=adapter")
        transcriber = AdapterTranscriber(
            _adapter_client(config.asr_adapter),
            timeout_s=config.adapter_timeout_s,
            sample_rate=config.sample_rate,
        )

    scorer = ScorerConfig(sigmoid_a=config.sigmoid_a, sigmoid_b=config.sigmoid_b)
    if config.protocol == "builtin":
        predictor = BuiltinPredictor(kb, scorer)
    else:
        if not config.protocol_adapter:
            raise ConfigError("protocol_adapter", "required when protocol=adapter")
        predictor = AdapterPredictor(
            _adapter_client(config.protocol_adapter), kb,
            timeout_s=config.adapter_timeout_s, config=scorer,
        )

    if config.vision == "none":
        classifier = None
    elif config.vision == "oracle":
        lookup = manifest.truth_lookup() if manifest else (lambda frame: None)
        classifier = OracleClassifier(lookup, epsilon=config.epsilon, seed=config.classifier_seed)
    else:
        if not config.vision_adapter:
            raise ConfigError("vision_adapter", "required when vision=adapter")
        classifier = AdapterClassifier(
            _adapter_client(config.vision_adapter), timeout_s=config.adapter_timeout_s
        )
    return transcriber, predictor, classifier


def _load_kb(config: RunConfig):
    return load_knowledge_base(config.kb_path) if config.kb_path else load_reference_kb()


def _settings(config: RunConfig) -> PipelineSettings:
    return PipelineSettings(
        window_samples=config.window_samples,
        sample_rate=config.sample_rate,
        gate_threshold=config.gate_threshold,
        slo_target_us=config.slo_target_us,
        asr_delay_s=config.asr_delay_s,
    )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {
        key: getattr(args, key)
        for key in RunConfig().to_dict()
        if hasattr(args, key) and getattr(args, key) is not None
    }
    return parse_config(flags, file=getattr(args, "config", None))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--kb-path", dest="kb_path", help="knowledge base file (default: shipped reference)")
    parser.add_argument("--window-samples", dest="window_samples", type=int, help="samples per window")
    parser.add_argument("--sample-rate", dest="sample_rate", type=int, help="stream sample rate")
    parser.add_argument("--gate-threshold", dest="gate_threshold", type=float, help="vision gate threshold")
    parser.add_argument("--slo-target-us", dest="slo_target_us", type=int, help="latency objective in µs")
    parser.add_argument("--asr", choices=("replay", "null", "adapter"), help="transcriber implementation")
    parser.add_argument("--protocol", choices=("builtin", "adapter"), help="protocol ranker implementation")
    parser.add_argument("--vision", choices=("oracle", "adapter", "none"), help="frame classifier implementation")
    parser.add_argument("--epsilon", type=float, help="oracle classifier noise rate")
    parser.add_argument("--classifier-seed", dest="classifier_seed", type=int, help="oracle classifier seed")
    parser.add_argument("--asr-adapter", dest="asr_adapter", help="ASR adapter endpoint (host:port or cmd:...)")
    parser.add_argument("--protocol-adapter", dest="protocol_adapter", help="ranker adapter endpoint")
    parser.add_argument("--vision-adapter", dest="vision_adapter", help="classifier adapter endpoint")
    parser.add_argument("--adapter-timeout-s", dest="adapter_timeout_s", type=float, help="adapter deadline")
    parser.add_argument("--asr-delay-s", dest="asr_delay_s", type=float, help="artificial ASR stage delay")
    parser.add_argument("--sigmoid-a", dest="sigmoid_a", type=float, help="confidence slope")
    parser.add_argument("--sigmoid-b", dest="sigmoid_b", type=float, help="confidence midpoint")


def _cmd_simulate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.scenario)
    violations = validate_manifest(manifest)
    if violations:
        raise ManifestError(f"{manifest.scenario_id}: {violations[0]}")
    impairment = ImpairmentProfile(
        loss_prob=args.loss, reorder_prob=args.reorder, jitter_ms=args.jitter_ms, seed=args.seed
    )
    report = replay_scenario(
        manifest, args.target, args.audio_port, args.video_port, impairment, args.speed
    )
    _emit(
        {
            "scenario_id": report.scenario_id,
            "audio_packets_sent": report.audio_packets_sent,
            "audio_packets_dropped": report.audio_packets_dropped,
            "frames_sent": report.frames_sent,
            "fragments_sent": report.fragments_sent,
            "fragments_dropped": report.fragments_dropped,
            "send_errors": report.send_errors,
            "wall_seconds": round(report.wall_seconds, 3),
        }
    )
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    kb = _load_kb(config)
    manifest = load_manifest(config.scenario_dir) if config.scenario_dir else None
    if manifest is None and (config.asr == "replay" or config.vision == "oracle"):
        raise ConfigError("scenario_dir", "required for replay transcriber or oracle classifier")
    transcriber, predictor, classifier = build_stages(config, kb, manifest)
    gateway = run_gateway(
        GatewayConfig(
            host=config.host,
            audio_port=config.audio_port,
            video_port=config.video_port,
            feedback_port=config.feedback_port,
            frame_timeout_ms=config.frame_timeout_ms,
        )
    )
    pipeline = run_live_pipeline(
        gateway, kb, transcriber, predictor, classifier,
        settings=_settings(config), run_dir=config.run_dir,
        config_snapshot=config.to_dict(),
    )
    sys.stderr.write(
        f"listening: audio udp/{gateway.audio_port} video udp/{gateway.video_port} "
        f"feedback tcp/{gateway.feedback_port}\n"
    )
    try:
        if args.duration > 0:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    art = pipeline.stop_and_collect()
    gateway.stop()
    _emit(
        {
            "windows_completed": art.counters["windows_completed"],
            "protocol_feedbacks": len(art.protocol_feedbacks),
            "intervention_predictions": len(art.interventions),
            "slo_violations": len(art.slo_report.violations) if art.slo_report else 0,
            "run_dir": art.run_dir,
        }
    )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    kb = _load_kb(config)
    settings = _settings(config)
    if config.asr == "replay" and config.vision == "oracle" and config.protocol == "builtin":
        factory = default_stage_factory(settings, epsilon=config.epsilon, seed=config.classifier_seed)
    else:
        def factory(manifest, kb_inner):
            return build_stages(config, kb_inner, manifest)
    report = run_eval(
        args.scenarios,
        kb,
        settings=settings,
        out_dir=args.out,
        profile=_profile(args.text_profile),
        stage_factory=factory,
        acc_mode=args.acc_mode,
        parallel=args.parallel,
    )
    _emit(report.to_dict())
    return EXIT_OK


def _cmd_predict(args: argparse.Namespace) -> int:
    kb = load_knowledge_base(args.kb) if args.kb else load_reference_kb()
    text = Path(args.text).read_text(encoding="utf-8")
    from .protocols import IncidentState, accumulate
    from .audio import TranscriptSegment

    state = IncidentState()
    accumulate(state, TranscriptSegment(0, text, "cli", 0))
    predictor = BuiltinPredictor(kb, ScorerConfig(sigmoid_a=args.sigmoid_a, sigmoid_b=args.sigmoid_b))
    prediction = predictor.predict(state, window_id=0, now_us=0)
    _emit(
        {
            "extracted_age": state.extracted_age,
            "low_information": prediction.low_information,
            "ranking": [
                {"protocol_id": e.protocol_id, "confidence": round(e.confidence, 6)}
                for e in prediction.entries[: args.top]
            ],
        }
    )
    return EXIT_OK


def _cmd_kb_validate(args: argparse.Namespace) -> int:
    kb = load_knowledge_base(args.kb)
    _emit(
        {
            "protocols": len(kb.protocol_ids()),
            "nodes": len(kb.nodes),
            "edges": len(kb.edges),
            "groups": len(kb.groups),
            "vision_enabled": sorted(kb.interventions),
        }
    )
    return EXIT_OK


def _read_instances(path: Path) -> list[LabelInstance]:
    raw = json.loads(path.read_text(encoding="utf-8"))
    return [LabelInstance.make(item["truth"], item["predicted"]) for item in raw]


def _cmd_metrics(args: argparse.Namespace) -> int:
    if args.metric in ("wer", "cer"):
        fn = wer if args.metric == "wer" else cer
        value = fn(
            Path(args.ref).read_text(encoding="utf-8"),
            Path(args.hyp).read_text(encoding="utf-8"),
            _profile(args.text_profile),
        )
        sys.stdout.write(f"{value}\n")
    elif args.metric == "f1":
        instances = _read_instances(Path(args.instances))
        _emit(
            {
                "micro_f1": micro_f1(instances, threshold=args.threshold),
                "macro_f1": macro_f1(instances, threshold=args.threshold),
            }
        )
    else:  # acc
        instances = _read_instances(Path(args.instances))
        sys.stdout.write(f"{acc_at_k(instances, args.k, mode=args.acc_mode)}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emspipe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"emspipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="replay a scenario directory at a gateway")
    sim.add_argument("--scenario", required=True, type=Path, help="scenario directory")
    sim.add_argument("--target", default="127.0.0.1", help="gateway host")
    sim.add_argument("--audio-port", dest="audio_port", type=int, default=5801, help="gateway audio port")
    sim.add_argument("--video-port", dest="video_port", type=int, default=5802, help="gateway video port")
    sim.add_argument("--loss", type=float, default=0.0, help="packet loss probability")
    sim.add_argument("--reorder", type=float, default=0.0, help="adjacent reorder probability")
    sim.add_argument("--jitter-ms", dest="jitter_ms", type=float, default=0.0, help="max added delay")
    sim.add_argument("--seed", type=int, default=0, help="impairment seed")
    sim.add_argument("--speed", type=float, default=1.0, help="replay speed multiplier")
    sim.set_defaults(handler=_cmd_simulate)

    run = sub.add_parser("run", help="run the gateway and live pipeline")
    _add_config_flags(run)
    run.add_argument("--host", help="bind address")
    run.add_argument("--audio-port", dest="audio_port", type=int, help="audio UDP port")
    run.add_argument("--video-port", dest="video_port", type=int, help="video UDP port")
    run.add_argument("--feedback-port", dest="feedback_port", type=int, help="feedback TCP port")
    run.add_argument("--run-dir", dest="run_dir", help="artifact output directory")
    run.add_argument("--scenario", dest="scenario_dir", help="scenario dir for replay/oracle stages")
    run.add_argument("--duration", type=float, default=0.0, help="seconds to run (0 = until Ctrl+C)")
    run.set_defaults(handler=_cmd_run)

    ev = sub.add_parser("eval", help="evaluate scenarios offline")
    _add_config_flags(ev)
    ev.add_argument("--scenarios", nargs="+", required=True, type=Path, help="scenario directories")
    ev.add_argument("--out", type=Path, help="report output directory")
    ev.add_argument("--text-profile", dest="text_profile", default="standard",
                    choices=("standard", "limited_vocab"), help="normalization profile")
    ev.add_argument("--acc-mode", dest="acc_mode", default="any", choices=("any", "all"),
                    help="top-k hit rule for multi-label truth")
    ev.add_argument("--parallel", action="store_true", help="evaluate scenarios in parallel")
    ev.set_defaults(handler=_cmd_eval)

    pred = sub.add_parser("predict", help="rank protocols for a transcript file")
    pred.add_argument("--kb", type=Path, help="knowledge base file (default: shipped reference)")
    pred.add_argument("--text", required=True, type=Path, help="transcript text file")
    pred.add_argument("--top", type=int, default=5, help="ranking entries to print")
    pred.add_argument("--sigmoid-a", dest="sigmoid_a", type=float, default=4.0, help="confidence slope")
    pred.add_argument("--sigmoid-b", dest="sigmoid_b", type=float, default=0.5, help="confidence midpoint")
    pred.set_defaults(handler=_cmd_predict)

    kbv = sub.add_parser("kb-validate", help="validate a knowledge-base file")
    kbv.add_argument("kb", type=Path, help="knowledge base JSON file")
    kbv.set_defaults(handler=_cmd_kb_validate)

    met = sub.add_parser("metrics", help="standalone metric calculators")
    met_sub = met.add_subparsers(dest="metric", required=True)
    for name in ("wer", "cer"):
        m = met_sub.add_parser(name, help=f"{name} between two transcripts")
        m.add_argument("--ref", required=True, help="reference text file")
        m.add_argument("--hyp", required=True, help="hypothesis text file")
        m.add_argument("--text-profile", dest="text_profile", default="standard",
                       choices=("standard", "limited_vocab"), help="normalization profile")
        m.set_defaults(handler=_cmd_metrics, metric=name)
    f1 = met_sub.add_parser("f1", help="micro/macro F1 over an instance file")
    f1.add_argument("--instances", required=True, help="JSON instance file")
    f1.add_argument("--threshold", type=float, default=0.5, help="confidence threshold")
    f1.set_defaults(handler=_cmd_metrics, metric="f1")
    acc = met_sub.add_parser("acc", help="top-k accuracy over an instance file")
    acc.add_argument("--instances", required=True, help="JSON instance file")
    acc.add_argument("--k", type=int, default=1, help="ranking depth")
    acc.add_argument("--acc-mode", dest="acc_mode", default="any", choices=("any", "all"),
                     help="hit rule for multi-label truth")
    acc.set_defaults(handler=_cmd_metrics, metric="acc")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, SchemaError, ManifestError, ValueError) as exc:
        _error_line(type(exc).__name__, str(exc))
        return EXIT_CONFIG
    except EmspipeError as exc:
        _error_line(type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    except OSError as exc:
        _error_line(type(exc).__name__, str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
