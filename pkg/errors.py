class PmsamError(Exception):
    """Base class for every error raised by the optimizer."""


class ContractViolation(PmsamError, ValueError):
    """A precondition of an operation was not met by its caller."""


class ConfigurationError(PmsamError, ValueError):
    """Invalid or unknown configuration value. `key` names the offending setting."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def from_validation_error(exc) -> ConfigurationError:
    """Translate a pydantic ValidationError into a ConfigurationError naming the field."""
    first = exc.errors()[0]
    key = ".".join(str(part) for part in first.get("loc", ())) or None
    return ConfigurationError(f"Invalid value for {key or 'config'}: {first['msg']}", key=key)
