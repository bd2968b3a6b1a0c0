"""brclab: a desk-scale multi-task value-based RL lab.

Categorical critics with per-task return normalization, residual
layer-normalized networks, learnable task embeddings, and the diagnostics
and transfer protocols used to study them on small toy suites.
"""

__version__ = "0.1.0"
