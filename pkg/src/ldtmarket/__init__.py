"""Reserve-aware electricity market clearing under Gaussian wind-forecast errors.

Four clearing models share one case format and one result type:

* ``cc``: affine response with per-unit chance constraints
* ``wcc``: affine response with expected-overload limits
* ``ldt-cc``: regular plus extreme reserve, sized at the dominant shortfall
* ``ldt-wcc``: piecewise response with expected-overload limits in both regions
"""

from .formulations import ClearingResult, ModelKind, clear
from .model import CaseError, SystemCase, bundled_case_path, load_case

__version__ = "0.1.0"

__all__ = [
    "ClearingResult",
    "ModelKind",
    "clear",
    "CaseError",
    "SystemCase",
    "bundled_case_path",
    "load_case",
    "__version__",
]
