"""Small-time WKB asymptotics for the heat kernel of the stochastic geodesic flow."""
from . import errors
from .geometry import (
    ExtensionMetric,
    FlatMetric,
    MetricJet,
    QuadraticNormalMetric,
    kappa_model,
    metric_jet,
    scalar_curvature,
    validate_normal_coords,
)

__version__ = "0.1.0"
