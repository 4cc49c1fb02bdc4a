"""Multi-model open-vocabulary feature fusion and distillation for 3D point clouds."""

__version__ = "0.1.0"
