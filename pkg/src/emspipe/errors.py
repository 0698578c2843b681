"""Exception hierarchy shared across the pipeline."""


class EmspipeError(Exception):
    """Base class for all package errors."""


class EncodingError(EmspipeError):
    """A value cannot be serialized for the wire."""


class MalformedPacket(EmspipeError):
    """Received bytes do not form a valid packet."""


class FrameDropped(EmspipeError):
    """A video frame timed out with fragments still missing."""


class StartupError(EmspipeError):
    """The gateway could not bind its ports."""


class ManifestError(EmspipeError):
    """A scenario manifest is unreadable or structurally broken."""


class SchemaError(EmspipeError):
    """A knowledge-base file violates its schema.

    ``rule`` names the violated invariant so callers can report it.
    """

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        self.detail = detail
        super().__init__(f"{rule}: {detail}" if detail else rule)


class DuplicateSegment(EmspipeError):
    """A transcript segment for an already-accumulated window was appended."""


class UnknownProtocol(EmspipeError):
    """A protocol id is absent from the knowledge base."""


class EmptyCandidates(EmspipeError):
    """The protocol exists but has no intervention labels (vision-disabled)."""


class AdapterTimeout(EmspipeError):
    """An external inference adapter did not answer within its deadline."""


class AdapterProtocolError(EmspipeError):
    """An external inference adapter answered with garbage."""


class QueueClosed(EmspipeError):
    """A message was submitted to a closed feedback queue."""


class TraceError(EmspipeError):
    """A latency trace has out-of-order timestamps."""

    def __init__(self, window_id: int, detail: str = ""):
        self.window_id = window_id
        super().__init__(f"window {window_id}: {detail}" if detail else f"window {window_id}")


class ConfigError(EmspipeError):
    """A configuration value is invalid.

    ``field`` names the offending key.
    """

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        super().__init__(f"{field}: {detail}" if detail else field)


class PipelineError(EmspipeError):
    """A pipeline stage crashed; partial artifacts were flushed."""
