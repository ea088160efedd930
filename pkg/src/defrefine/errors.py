"""Exception types shared across the package."""


class DefRefineError(Exception):
    """Base class for all package errors."""


class DataError(DefRefineError):
    """Dataset loading or validation failure, or an empty sampling stratum."""


class ProviderError(DefRefineError):
    """Embedding or LLM provider failure that exhausted its retry budget."""


class ScriptExhaustedError(ProviderError):
    """A scripted mock provider ran out of queued responses."""


class DefinitionParseError(DefRefineError):
    """LLM output could not be parsed into a complete definition set."""


class ConfigError(DefRefineError):
    """Invalid run configuration or command usage."""
