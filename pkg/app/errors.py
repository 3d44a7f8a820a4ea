"""Exception hierarchy shared by every stemdiff module."""
from __future__ import annotations

from typing import Any, Optional


class StemDiffError(RuntimeError):
    """Base class; the CLI turns these into one-line JSON errors."""


class ConfigError(StemDiffError):
    pass


class MidiParseError(StemDiffError):
    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class AudioError(StemDiffError):
    pass


class UnsupportedCodecError(AudioError):
    def __init__(self, codec: str) -> None:
        self.codec = codec
        super().__init__(
            f"unsupported WAV codec '{codec}': only PCM_16 and FLOAT are accepted"
        )


class DatasetError(StemDiffError):
    pass


class ManifestError(DatasetError):
    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"manifest line {line}: {message}"
        super().__init__(message)


class InstructionError(StemDiffError):
    pass


class RetryExhaustedError(InstructionError):
    def __init__(self, attempts: int, last_error: str) -> None:
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"LLM endpoint failed {attempts} times, last error: {last_error}")


class NonFiniteLossError(StemDiffError):
    def __init__(self, step: int, lr: float, max_grad: float, loss: float) -> None:
        self.step = step
        self.lr = lr
        self.max_grad = max_grad
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss} at step {step} (lr={lr:.3e}, max|grad|={max_grad:.3e})"
        )


class CheckpointError(StemDiffError):
    pass


class RejectionExhaustedError(StemDiffError):
    def __init__(self, attempts: int, last_density: float, candidate: Any) -> None:
        self.attempts = attempts
        self.last_density = last_density
        self.candidate = candidate
        super().__init__(
            f"rejection sampling exhausted after {attempts} attempts "
            f"(last density {last_density:.4f})"
        )


class MetricError(StemDiffError):
    pass
