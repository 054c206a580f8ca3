"""Bridge settings: which model backs each endpoint, and where to listen."""

import re
from dataclasses import dataclass, fields

from capseg_bridge import models
from capseg_bridge.errors import ConfigError

_DEVICE = re.compile(r"^(cpu|cuda(:\d+)?)$")


@dataclass(frozen=True)
class BridgeConfig:
    """An empty model identifier disables that endpoint; everything else
    must name a registered loader scheme.  Weights themselves load once at
    startup (``make_server`` / ``dump_embeddings``), so a bad checkpoint
    still fails before the first request, just not at validation."""

    encoder_model: str = "stub:0"
    caption_model: str = "stub:0"
    segment_model: str = "stub:0"
    generate_model: str = "stub:0"
    device: str = "cpu"
    host: str = "127.0.0.1"
    port: int = 8644

    def validate(self) -> "BridgeConfig":
        if not _DEVICE.match(self.device):
            raise ConfigError(f"device must be cpu or cuda[:N], got {self.device!r}")
        if not 0 <= self.port <= 65535:
            raise ConfigError(f"port must be in [0, 65535], got {self.port}")
        if not self.host:
            raise ConfigError("host must be non-empty")
        for kind, identifier in self.enabled().items():
            models.check_scheme(kind, identifier)
        return self

    def enabled(self) -> dict[str, str]:
        """kind -> identifier for every endpoint that has a model."""
        out = {}
        for f in fields(self):
            if f.name.endswith("_model"):
                identifier = getattr(self, f.name)
                if identifier:
                    out[f.name.removesuffix("_model")] = identifier
        return out
