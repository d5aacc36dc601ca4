#!/usr/bin/env python3
"""
Exception types for the BiTe-GCN toolkit
Every failure the pipeline reports on purpose is a BiteError
"""

from typing import Optional


class BiteError(Exception):
    """Base class for all toolkit errors"""


class FormatError(BiteError, ValueError):
    """A file could not be parsed; carries the path and 1-based line number"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class GraphError(BiteError, ValueError):
    """Invalid graph construction input"""


class CorpusError(BiteError, ValueError):
    """Invalid corpus or phrase vocabulary"""


class EmbeddingError(BiteError, ValueError):
    """Embedding table is missing ids or holds invalid vectors"""


class RefineError(BiteError, ValueError):
    """Invalid refinement configuration or input"""


class ShapeError(BiteError, ValueError):
    """Tensor shapes do not agree"""


class NonFiniteError(BiteError, FloatingPointError):
    """A forward op produced NaN or Inf"""


class TapeError(BiteError, RuntimeError):
    """Misuse of the gradient tape"""


class TrainingError(BiteError, ValueError):
    """Invalid training input (labels, splits, variants)"""


class DivergenceError(BiteError, RuntimeError):
    """Training loss became non-finite"""

    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        message = f"training diverged at epoch {epoch}"
        if detail:
            message += f": {detail}"
        super().__init__(message)


class ConfigError(BiteError, ValueError):
    """Invalid configuration key or value; carries the offending key"""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)


class DatasetError(BiteError, ValueError):
    """Missing or inconsistent dataset bundle"""


class FetchError(BiteError, OSError):
    """Dataset download failed"""
