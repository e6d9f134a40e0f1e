from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab."""


class DomainError(LabError, ValueError):
    pass


class ShapeError(LabError, ValueError):
    pass


class StateError(LabError, RuntimeError):
    pass


class DegenerateFeatureError(DomainError):
    def __init__(self, message: str, sample_index: Optional[int] = None, class_id: Optional[int] = None):
        super().__init__(message)
        self.sample_index = sample_index
        self.class_id = class_id


class ProtocolValidationError(LabError, ValueError):
    pass


class TrainingDivergenceError(LabError, RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(LabError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
        self.key = key
        self.line = line


def require_same_shape(a, b, what: str = "arrays"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} shape mismatch: {a.shape} vs {b.shape}")
