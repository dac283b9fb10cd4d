"""Multi-label attribute recognition on a small numpy autodiff engine.

Residual networks trained with imbalance-weighted sigmoid cross-entropy,
per-attribute threshold calibration, label- and example-based metrics and
GradCAM heatmaps.
"""

__version__ = "0.1.0"
