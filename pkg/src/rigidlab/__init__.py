"""Intrinsic determinant/cofactor calculus and distortion energies between
chart-discretized Riemannian manifolds."""

__version__ = "0.1.0"
