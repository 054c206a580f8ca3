"""Error taxonomy; the CLI maps these onto exit codes."""


class BridgeError(Exception):
    """Base class for everything the bridge raises on purpose."""


class ConfigError(BridgeError):
    """A setting is malformed or names an unresolvable model."""


class ModelError(BridgeError):
    """A model failed to load or to run."""


class ImageError(BridgeError):
    """An input image is missing or unreadable."""
