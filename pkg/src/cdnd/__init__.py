"""Curvature-diversity deformation and nuclear-norm Wasserstein alignment for point-cloud UDA."""

__version__ = "0.1.0"
