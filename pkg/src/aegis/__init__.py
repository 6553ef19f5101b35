"""Real-time facial-expression classification pipeline.

Faces found by a Haar cascade are cropped, resized to 48x48 and pushed into a
per-track FIFO of length t; the stacked 48x48xt window is classified by a
ResNet20-style network into seven expressions and the frame is augmented with
an emoji or a text label.
"""

from .model_io import CLASS_LABELS

__all__ = ["CLASS_LABELS"]
__version__ = "0.1.0"
