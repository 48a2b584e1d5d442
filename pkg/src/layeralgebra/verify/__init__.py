"""Property-test engine: gradient oracle, dense-operator harness, structure checks."""

from .checks import (
    TABLE1,
    check_dual_path,
    check_dynamic_vs_static,
    check_equivariance_violation,
    check_kronecker,
    check_locality,
    check_oracle_equivalence,
    check_set_permutation,
    check_sharing_structure,
    check_translation_equivariance,
    corrupt_operator,
    equivariance_gap,
    interior_mask,
    measure_structure,
)
from .gradcheck import check_gradients, finite_difference_grad, relative_error, step_sweep
from .report import EXCEEDS, FAIL, INAPPLICABLE, PASS, WITHIN, CheckReport
from .suites import SUITES, run_suite, run_suites

__all__ = [
    "CheckReport", "EXCEEDS", "FAIL", "INAPPLICABLE", "PASS", "SUITES", "TABLE1", "WITHIN",
    "check_dual_path", "check_dynamic_vs_static", "check_equivariance_violation",
    "check_gradients", "check_kronecker", "check_locality", "check_oracle_equivalence",
    "check_set_permutation", "check_sharing_structure", "check_translation_equivariance",
    "corrupt_operator", "equivariance_gap", "finite_difference_grad", "interior_mask",
    "measure_structure", "relative_error", "run_suite", "run_suites", "step_sweep",
]
