"""Lipschitz-Prokhorov distances between finite metric spaces carrying path laws."""

__version__ = "0.1.0"

from .metric_core import (
    CauchyInput,
    FiniteMetricSpace,
    MetricMap,
    cauchy_limit,
    dilation,
    isometry_defect,
    lipschitz_distance,
    self_isometries,
)
from .path_space import GridPath, GridPathMeasure, TimeGrid, pushforward_measure, uniform_metric
from .prokhorov import modified_inequality_check, prokhorov_bruteforce, prokhorov_distance
from .lp_metric import (
    IsoCertificate,
    PairInstance,
    certificate_compose,
    certificate_value,
    certificate_verify,
    convergence_report,
    dlp_exact,
    dlp_same_space,
    dlp_upper_bound,
)

__all__ = [
    "CauchyInput",
    "FiniteMetricSpace",
    "GridPath",
    "GridPathMeasure",
    "IsoCertificate",
    "MetricMap",
    "PairInstance",
    "TimeGrid",
    "cauchy_limit",
    "certificate_compose",
    "certificate_value",
    "certificate_verify",
    "convergence_report",
    "dilation",
    "dlp_exact",
    "dlp_same_space",
    "dlp_upper_bound",
    "isometry_defect",
    "lipschitz_distance",
    "modified_inequality_check",
    "prokhorov_bruteforce",
    "prokhorov_distance",
    "pushforward_measure",
    "self_isometries",
    "uniform_metric",
]
