"""Root-once sanitization of clinical inputs under index-space metric DP."""

from .allocator import Allocation, SensitivityProfile, allocate, closed_form_allocation, numeric_allocation, uniform_allocation
from .controller import DerivedRequest, Method, RootRequest, Sanitizer, SanitizerConfig, TargetBundle
from .mechanisms import Grid, MechanismKind, NoiseParams
from .templates import Template, all_templates, get_template

__version__ = "0.1.0"

__all__ = [
    "Allocation", "SensitivityProfile", "allocate", "closed_form_allocation", "numeric_allocation",
    "uniform_allocation", "DerivedRequest", "Method", "RootRequest", "Sanitizer", "SanitizerConfig",
    "TargetBundle", "Grid", "MechanismKind", "NoiseParams", "Template", "all_templates", "get_template",
]
