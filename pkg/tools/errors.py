"""
Exception hierarchy for the workbench.
Every error knows which module raised it and which condition failed, so the
CLI can turn it into a machine-readable error object.
"""

from typing import Any, Dict, List, Optional


class WorkbenchError(Exception):
    """Base class for all workbench failures"""

    module = "workbench"
    condition = "error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None,
                 module: Optional[str] = None, condition: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}
        if module:
            self.module = module
        if condition:
            self.condition = condition

    def to_dict(self) -> Dict[str, Any]:
        return {
            "success": False,
            "module": self.module,
            "condition": self.condition,
            "error": self.message,
            "details": self.details,
        }


# ---------- config / cli ----------

class ConfigError(WorkbenchError):
    module = "cli"
    condition = "malformed_config"


class ReportWriteError(WorkbenchError):
    module = "cli"
    condition = "io_failure"


# ---------- lattice_resonance ----------

class DuplicatePointError(WorkbenchError):
    module = "lattice_resonance"
    condition = "duplicate_points"


class NonAdmissibleError(WorkbenchError):
    module = "lattice_resonance"
    condition = "non_admissible"


class MultipleTripletError(WorkbenchError):
    module = "lattice_resonance"
    condition = "multiple_triplets"

    def __init__(self, message: str, triplets: List[Any]):
        super().__init__(message, {"triplets": [t.to_dict() for t in triplets]})
        self.triplets = triplets


class SearchExhaustedError(WorkbenchError):
    module = "lattice_resonance"
    condition = "search_exhausted"

    def __init__(self, message: str, attempts: int):
        super().__init__(message, {"attempts": attempts})
        self.attempts = attempts


class LatticeDistanceError(WorkbenchError):
    module = "lattice_resonance"
    condition = "distance_exceeds_cutoff"


# ---------- normal_form ----------

class ParameterError(WorkbenchError):
    module = "normal_form"
    condition = "invalid_parameters"


class ClassificationConflictError(WorkbenchError):
    module = "normal_form"
    condition = "site_in_both_resonance_classes"


class PairKindError(WorkbenchError):
    module = "normal_form"
    condition = "wrong_pair_kind"


class NonUnitaryError(WorkbenchError):
    module = "normal_form"
    condition = "non_unitary_rotation"


# ---------- homological_solver ----------

class AsymmetricBlockError(WorkbenchError):
    module = "homological_solver"
    condition = "asymmetric_block"


class SmallDivisorError(WorkbenchError):
    module = "homological_solver"
    condition = "small_divisor"

    def __init__(self, message: str, reports: List[Any]):
        super().__init__(message, {"reports": [r.to_dict() for r in reports]})
        self.reports = reports


# ---------- kam_engine / measure ----------

class IntegrationError(WorkbenchError):
    module = "kam_engine"
    condition = "integration_unstable"


class FitError(WorkbenchError):
    module = "measure_estimator"
    condition = "degenerate_fit"
