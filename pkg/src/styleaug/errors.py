"""Exception hierarchy shared across the pipeline.

The CLI maps these onto exit codes: ConfigError -> 2, BackendError -> 3,
DataError -> 4.
"""


class StyleAugError(Exception):
    """Base class for all package errors."""


class ConfigError(StyleAugError):
    """Invalid experiment configuration or schema violation."""


class DataError(StyleAugError):
    """Dataset, file-format, or shape problems."""


class BackendError(StyleAugError):
    """A remote backend failed after retries were exhausted."""


class CaptionRejected(StyleAugError):
    """A captioning response violated the caption contract after retry."""

    def __init__(self, reason: str, raw: str):
        super().__init__(reason)
        self.reason = reason
        self.raw = raw
