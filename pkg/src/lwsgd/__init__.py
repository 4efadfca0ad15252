"""Layer-wise sparse SGD training with truncated back-propagation.

Train with per-epoch layer selections (static or probabilistic), cut the
backward pass off at the deepest selected layer, and analyze which
parameters actually moved: movement-ranked re-initialization, top-percent
gradient activity maps, and sorted gradient-magnitude profiles.
"""

from lwsgd.tensor import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
