"""Exceptions shared across the package, mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad arguments, config keys, or call contracts (exit code 2)."""


class IngestError(Exception):
    """Corpus or checkpoint files missing or malformed (exit code 3)."""
