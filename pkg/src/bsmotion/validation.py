"""Input validation helpers shared by the functional API and the estimators."""

import warnings

import numpy as np

__all__ = ["check_trajectory", "check_controls", "check_points", "check_finite"]

# Displacements of a shape normalized into [-0.9, 0.9] rarely leave this range.
SOFT_DISPLACEMENT_BOUND = 10.0


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_trajectory(V, warn_bound=SOFT_DISPLACEMENT_BOUND):
    """Return a float64 ``(T, ...)`` trajectory array with at least one frame.

    A 1-D input is treated as a single scalar channel over ``T`` frames.
    Displacements larger than ``warn_bound`` emit a warning only.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 0:
        raise ValueError("trajectory must have a leading frame axis")
    if V.shape[0] < 1:
        raise ValueError("trajectory must contain at least one frame")
    if V.ndim > 1 and V.shape[1] < 1:
        raise ValueError("trajectory must contain at least one point")
    check_finite(V, "trajectory")
    if warn_bound is not None and V.size and np.max(np.abs(V)) > warn_bound:
        warnings.warn(
            f"trajectory displacements exceed {warn_bound} model units; "
            "was the shape normalized?",
            stacklevel=2,
        )
    return V


def check_controls(P):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 0 or P.shape[0] < 1:
        raise ValueError("control grid must have a leading control-point axis")
    return check_finite(P, "control grid")


def check_points(X, dim=None, name="points"):
    """2-D float array of points, optionally with a fixed column count."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} must have {dim} columns, got {X.shape[1]}")
    return check_finite(X, name)
