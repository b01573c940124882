from typing import Any, Dict, Optional


class BenchError(Exception):
    """
    Root of every error the bench raises on purpose.
    Carries a short machine-readable code plus a details dict so the CLI
    can print it as JSON without parsing the message.
    """
    code = "bench_error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "details": self.details}


class ConfigError(BenchError):
    code = "config_error"


class SignalError(BenchError):
    """Bad signal input: zero-power noise, empty speech, rate mismatch, out-of-range params."""
    code = "signal_error"


class WavFormatError(BenchError):
    code = "wav_format_error"

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        super().__init__(f"{message} (byte offset {offset})", {"offset": offset, "path": path})
        self.offset = offset


class GeometryError(BenchError):
    code = "geometry_error"


class PolicyViolationError(BenchError):
    code = "policy_violation"


class DimensionError(BenchError):
    code = "dimension_error"


class DivergenceError(BenchError):
    code = "divergence"

    def __init__(self, message: str, step: Optional[int] = None, parameter: Optional[str] = None,
                 last_good: Optional[str] = None):
        super().__init__(message, {"step": step, "parameter": parameter, "last_good": last_good})
        self.step = step
        self.parameter = parameter
        self.last_good = last_good


class DependencyError(BenchError):
    code = "missing_dependency"

    def __init__(self, stage: str, key: str, hint: str = ""):
        msg = f"Upstream stage '{stage}' has no artifact for '{key}'"
        if hint:
            msg += f". {hint}"
        super().__init__(msg, {"stage": stage, "key": key})
        self.stage = stage


class CacheMismatchError(BenchError):
    code = "cache_mismatch"


class ConfigHashMismatchError(BenchError):
    code = "config_hash_mismatch"
