"""dhmd: decoupled hierarchical multimodal distillation.

A trainable numpy library (with numba-accelerated kernels) implementing
feature decoupling, graph-based cross-modal distillation, cross-modal
attention, and dictionary matching over language/visual/acoustic sequences,
plus a training/evaluation CLI and a synthetic multimodal task suite.
"""

__version__ = "0.1.0"
