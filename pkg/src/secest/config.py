"""Global numerical tolerances.

``SECEST_TOL`` in the environment overrides the relative zero tolerance; it is
read on every call so a CLI invocation can change it without re-importing.
"""

import os

import numpy as np

DEFAULT_ZERO_TOL = 1e-9
# eigenvector matrices worse than this are rejected by to_modal
DEFAULT_COND_LIMIT = 1e8
# max |Im| allowed when mapping a modal estimate back to physical coordinates
REALNESS_TOL = 1e-8


def zero_tol() -> float:
    raw = os.environ.get("SECEST_TOL")
    if raw is None:
        return DEFAULT_ZERO_TOL
    try:
        value = float(raw)
    except ValueError as exc:
        raise ValueError(f"SECEST_TOL must be a float, got {raw!r}") from exc
    if not value > 0:
        raise ValueError(f"SECEST_TOL must be positive, got {raw!r}")
    return value


def scaled_tol(matrix) -> float:
    """Absolute threshold below which an entry of ``matrix`` counts as zero."""
    matrix = np.atleast_2d(np.asarray(matrix))
    scale = np.linalg.norm(matrix, np.inf) if matrix.size else 0.0
    return zero_tol() * max(1.0, float(scale))
