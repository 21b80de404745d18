"""seqchain: conditional chain models for one-to-many sequence transduction.

Separation, recognition, joint and iterative-denoising chains over synthetic
harmonic mixtures, plus parallel-PIT and serial baselines, on a small
self-contained reverse-mode autodiff core.
"""

from .autodiff import Tape, Tensor

__version__ = "0.1.0"

__all__ = ["Tape", "Tensor", "__version__"]
