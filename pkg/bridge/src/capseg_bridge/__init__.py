"""Model-side bridge for the capseg pipeline.

The pipeline core never loads a model; it talks to three HTTP services and
reads patch embeddings from ``.peg`` files.  This package is the other side
of those interfaces: it dumps embedding grids to disk and serves the
caption, segment and generate endpoints, either from real pretrained
checkpoints (see the README for the pinned identifiers) or from the
built-in deterministic stub family used for testing and development.

Nothing in here imports capseg; the wire formats and file formats are the
whole contract.
"""

from capseg_bridge.config import BridgeConfig
from capseg_bridge.dump import dump_embeddings
from capseg_bridge.errors import BridgeError, ConfigError, ImageError, ModelError
from capseg_bridge.server import make_server, serve

__all__ = [
    "BridgeConfig",
    "BridgeError",
    "ConfigError",
    "ImageError",
    "ModelError",
    "dump_embeddings",
    "make_server",
    "serve",
]
