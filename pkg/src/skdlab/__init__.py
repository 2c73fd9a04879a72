"""skdlab: a desk-scale laboratory for speculative knowledge distillation.

Tiny character-level language models (an exact tabular chain teacher and a
trainable MLP), every standard distillation regime plus interleaved
speculative distillation, exact evaluation oracles, and a reproducible
experiment CLI.
"""

from ._kernels import BACKEND as kernel_backend
from .errors import ConfigError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericalError", "kernel_backend", "__version__"]
