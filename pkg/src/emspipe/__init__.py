"""Real-time multimodal EMS assistant pipeline runtime and evaluation harness.

The CLI (``emspipe``) and this package expose the same functionality:

* :mod:`emspipe.wire`, :mod:`emspipe.gateway`: transport codecs and ingest
* :mod:`emspipe.simulator`: scenario replay with network impairments
* :mod:`emspipe.audio`, :mod:`emspipe.protocols`, :mod:`emspipe.interventions`:
  the three inference stages and their adapter seams
* :mod:`emspipe.pipeline`: live threaded execution and the deterministic
  offline driver
* :mod:`emspipe.metrics`, :mod:`emspipe.evalrun`: metric definitions and the
  scenario evaluation harness
"""

from .config import RunConfig, parse_config
from .evalrun import MetricReport, run_eval
from .gateway import GatewayConfig, run_gateway
from .kb import KnowledgeBase, load_knowledge_base, load_reference_kb
from .pipeline import PipelineSettings, RunArtifacts, run_live_pipeline, run_offline
from .simulator import ImpairmentProfile, ScenarioManifest, load_manifest, replay_scenario
from .tracing import LatencyTrace, SloReport, finalize_slo

__version__ = "0.1.0"

__all__ = [
    "GatewayConfig",
    "ImpairmentProfile",
    "KnowledgeBase",
    "LatencyTrace",
    "MetricReport",
    "PipelineSettings",
    "RunArtifacts",
    "RunConfig",
    "ScenarioManifest",
    "SloReport",
    "finalize_slo",
    "load_knowledge_base",
    "load_manifest",
    "load_reference_kb",
    "parse_config",
    "replay_scenario",
    "run_eval",
    "run_gateway",
    "run_live_pipeline",
    "run_offline",
    "__version__",
]
