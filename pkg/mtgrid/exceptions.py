from typing import Optional


class MtGridException(RuntimeError):
    pass


class ConfigError(MtGridException):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        elif key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class PlaceError(MtGridException):
    pass


class AssemblerError(MtGridException):
    """
    A diagnostic from the assembler, rendered as line:column: message
    """

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}")


class ContractViolation(MtGridException):
    pass


class AllocationError(MtGridException):
    pass


class SepError(MtGridException):
    pass


class SimulationError(MtGridException):
    pass


class TraceError(MtGridException):
    pass
