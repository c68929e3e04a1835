"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (e.g. extended a complete prefix)."""


class EnumerationCapExceeded(RuntimeError):
    """Brute-force enumeration or a DP table would exceed its configured size cap."""


class ConfigError(ValueError):
    """Malformed experiment or model configuration.

    ``field`` names the offending key so the CLI can print a useful diagnostic.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
