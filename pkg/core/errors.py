"""
Exception types shared by the library and the command modules

main.py maps ValidationError to exit code 1 and every other failure to 2.
"""


class ValidationError(ValueError):
    """Bad user input: config, manifest, flags, or a violated precondition."""


class PipelineError(RuntimeError):
    """Runtime failure while preparing, training or evaluating."""


class CacheFormatError(PipelineError):
    """A flow cache record could not be decoded."""
