"""Online learning with multiple correct answers.

Feedback-model Littlestone-style dimensions with checkable certificates,
the optimal realizable learners, agnostic learners and adversaries realizing
the regret trichotomy (linear / sqrt(T log T) / constant), and an
online-to-batch conversion harness.
"""

__version__ = "0.1.0"

from .core import HypothesisClass, Model, validate_class  # noqa: F401
from .dimensions import lds, ldk, ldu  # noqa: F401
