"""Exception types raised across the simulator."""


class BatsError(Exception):
    """Base class for simulator errors."""


class EmptyBatchBuffer(BatsError):
    pass


class InconsistentState(BatsError):
    """Elimination met a contradiction; received data is corrupt."""


class InfeasibleLP(BatsError):
    pass


class DistanceTooSmall(BatsError):
    pass


class IndexOutOfRange(BatsError, IndexError):
    pass


class DegenerateProfile(BatsError):
    pass


class NoProgress(BatsError):
    pass


class AllVehiclesLeft(BatsError):
    pass


class ConfigError(BatsError):
    """Base for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ConfigError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
