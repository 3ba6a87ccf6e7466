"""Laplacian-regularized least-squares fitting of control grids to trajectories."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as la

from .spline import BasisMatrix, uniform_basis_matrix
from .validation import check_controls, check_trajectory

__all__ = [
    "DEFAULT_MU",
    "MIN_UNDERDETERMINED_MU",
    "ControlGrid",
    "FittingOperator",
    "UnderdeterminedError",
    "build_second_difference",
    "build_fitting_operator",
    "build_ridge_operator",
    "fit_control_points",
    "fit_ridge",
    "reproject",
    "fit_variable_sequence",
    "cached_fitting_operator",
    "laplacian_objective",
    "stationarity_residual",
]

DEFAULT_MU = 1e-3
MIN_UNDERDETERMINED_MU = 1e-6


class UnderdeterminedError(ValueError):
    """Raised when an unregularized fit has fewer frames than control points."""


@dataclass(frozen=True)
class ControlGrid:
    """Per-point B-spline control points, shape ``(k, n, 3)`` (or ``(k, ...)``)."""

    points: np.ndarray
    degree: int = 3
    source_frame_count: int | None = None

    def __post_init__(self):
        pts = check_controls(self.points)
        if pts.shape[0] < self.degree + 1:
            raise ValueError(
                f"control grid needs at least {self.degree + 1} rows for degree "
                f"{self.degree}, got {pts.shape[0]}"
            )
        object.__setattr__(self, "points", pts)

    @property
    def control_count(self):
        return self.points.shape[0]

    @property
    def point_count(self):
        return self.points.shape[1] if self.points.ndim > 1 else 1

    @property
    def shape(self):
        return self.points.shape


@dataclass(frozen=True)
class FittingOperator:
    """Precomputed ``O = (B^T B + mu L^T L)^{-1} B^T`` with its Cholesky factor.

    ``penalty`` is ``L^T L`` for the Laplacian fit or the identity for ridge.
    When constants lie in the penalty's null space the operator reproduces them,
    and ``apply`` fits relative to the first frame so they come back exactly
    instead of picking up rounding from an ill-conditioned factor.
    """

    operator_matrix: np.ndarray
    mu: float
    basis: BasisMatrix = field(repr=False)
    gram_factor: np.ndarray = field(repr=False)
    penalty: np.ndarray = field(repr=False)
    preserves_constants: bool = False

    @property
    def frame_count(self):
        return self.basis.frame_count

    @property
    def control_count(self):
        return self.basis.control_count

    @property
    def gram(self):
        B = self.basis.entries
        return B.T @ B + self.mu * self.penalty

    def solve(self, rhs):
        """Solve ``G x = rhs`` with the stored factor (``G`` the regularized Gram)."""
        return la.cho_solve((self.gram_factor, True), rhs, check_finite=False)

    def apply(self, trajectory):
        """Fit every column of a ``(T, ...)`` array; returns ``(k, ...)``."""
        V = np.asarray(trajectory, dtype=np.float64)
        if V.shape[0] != self.frame_count:
            raise ValueError(
                f"trajectory has {V.shape[0]} frames, operator was built for "
                f"{self.frame_count}"
            )
        flat = V.reshape(V.shape[0], -1)
        if self.preserves_constants:
            anchor = flat[:1]
            out = _columnwise_matmul(self.operator_matrix, flat - anchor) + anchor
        else:
            out = _columnwise_matmul(self.operator_matrix, flat)
        return out.reshape((self.control_count,) + V.shape[1:])


def _columnwise_matmul(A, X):
    # A lone column would take the BLAS matrix-vector path, whose summation
    # order differs from matrix-matrix; pad so every column is computed the
    # same way regardless of how many are fitted together.
    if X.shape[1] == 1:
        return (A @ np.repeat(X, 2, axis=1))[:, :1]
    return A @ X


def build_second_difference(k):
    """Interior second-difference stencil ``[1, -2, 1]``, shape ``(k - 2, k)``."""
    k = int(k)
    if k < 3:
        raise ValueError(f"second difference needs k >= 3, got k={k}")
    L = np.zeros((k - 2, k))
    rows = np.arange(k - 2)
    L[rows, rows] = 1.0
    L[rows, rows + 1] = -2.0
    L[rows, rows + 2] = 1.0
    return L


def _laplacian_penalty(k):
    if k < 3:
        # No interior stencil exists; nothing to penalize.
        return np.zeros((k, k))
    L = build_second_difference(k)
    return L.T @ L


def _build(basis, mu, penalty):
    mu = float(mu)
    if not np.isfinite(mu) or mu < 0:
        raise ValueError(f"mu must be a finite non-negative number, got {mu}")
    B = basis.entries
    T, k = B.shape
    if mu == 0 and T < k:
        raise UnderdeterminedError(
            f"underdetermined fit: {T} frames < {k} control points requires mu > 0"
        )
    G = B.T @ B + mu * penalty
    try:
        factor = la.cholesky(G, lower=True, check_finite=False)
    except la.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"regularized Gram matrix is not positive definite (T={T}, k={k}, mu={mu})"
        ) from exc
    op = la.cho_solve((factor, True), B.T, check_finite=False)
    op.setflags(write=False)
    factor.setflags(write=False)
    return op, factor, mu


def build_fitting_operator(basis, mu=DEFAULT_MU):
    """Factor ``B^T B + mu L^T L`` and materialize the ``k x T`` fitting operator.

    Parameters
    ----------
    basis : BasisMatrix
    mu : float
        Weight of the second-difference penalty on consecutive control points.

    Raises
    ------
    UnderdeterminedError
        ``mu == 0`` with fewer frames than control points.
    numpy.linalg.LinAlgError
        The Gram matrix failed to factor.
    """
    penalty = _laplacian_penalty(basis.control_count)
    op, factor, mu = _build(basis, mu, penalty)
    return FittingOperator(op, mu, basis, factor, penalty, preserves_constants=True)


def build_ridge_operator(basis, mu=DEFAULT_MU):
    """Like :func:`build_fitting_operator` with ``L^T L`` replaced by the identity."""
    penalty = np.eye(basis.control_count)
    op, factor, mu = _build(basis, mu, penalty)
    return FittingOperator(op, mu, basis, factor, penalty)


@lru_cache(maxsize=256)
def cached_fitting_operator(n_frames, k, d=3, mu=DEFAULT_MU, regularizer="laplacian"):
    """Operator for a uniform ``(T, k, d, mu)`` basis, factored once and reused."""
    basis = uniform_basis_matrix(n_frames, k, d)
    if regularizer == "laplacian":
        return build_fitting_operator(basis, mu)
    if regularizer == "ridge":
        return build_ridge_operator(basis, mu)
    raise ValueError(f"unknown regularizer {regularizer!r}")


def fit_control_points(op, trajectory):
    """Fit control points to a trajectory grid with a prebuilt operator.

    Each point and coordinate is an independent right-hand side; they all share
    the one factorization.
    """
    V = check_trajectory(trajectory)
    P = op.apply(V)
    return ControlGrid(P, degree=op.basis.degree, source_frame_count=V.shape[0])


def fit_ridge(basis, mu, trajectory):
    """Ridge (identity-penalty) fit, the ablation baseline to the Laplacian fit."""
    return fit_control_points(build_ridge_operator(basis, mu), trajectory)


def reproject(control, target_frames):
    """Evaluate a control grid at ``target_frames`` uniform times on ``[0, 1]``."""
    if not isinstance(control, ControlGrid):
        control = ControlGrid(control)
    B = uniform_basis_matrix(target_frames, control.control_count, control.degree)
    P = control.points
    flat = P.reshape(P.shape[0], -1)
    return _columnwise_matmul(B.entries, flat).reshape((B.frame_count,) + P.shape[1:])


def fit_variable_sequence(trajectory, k=16, d=3, mu=DEFAULT_MU, regularizer="laplacian"):
    """Compress a trajectory of any length into ``k`` control points.

    When ``T < k`` the system is underdetermined and ``mu`` must be positive;
    it is raised to at least ``MIN_UNDERDETERMINED_MU``.  A single frame is
    extended as a constant.  ``regularizer="ridge"`` swaps the second-difference
    penalty for the identity.
    """
    V = check_trajectory(trajectory)
    T = V.shape[0]
    mu = float(mu)
    if T < k:
        if mu == 0:
            raise UnderdeterminedError(
                f"underdetermined fit: {T} frames < {k} control points; "
                "the Laplacian weight mu must be positive"
            )
        mu = max(mu, MIN_UNDERDETERMINED_MU)
    if T == 1 and regularizer == "laplacian":
        # B has a single row and L^T L misses linear ramps, so the Gram matrix is
        # singular; the constant extension is the minimizer we return.
        P = np.broadcast_to(V, (k,) + V.shape[1:]).copy()
        return ControlGrid(P, degree=d, source_frame_count=1)
    op = cached_fitting_operator(T, int(k), int(d), mu, regularizer)
    return fit_control_points(op, V)


def laplacian_objective(basis, mu, control, trajectory):
    """``||B P - V||_F^2 + mu ||L P||_F^2`` with control/trajectory as arrays."""
    B = np.asarray(basis, dtype=np.float64)
    P = np.asarray(getattr(control, "points", control), dtype=np.float64)
    V = np.asarray(trajectory, dtype=np.float64)
    Pf = P.reshape(P.shape[0], -1)
    Vf = V.reshape(V.shape[0], -1)
    fit = np.sum((B @ Pf - Vf) ** 2)
    if Pf.shape[0] < 3:
        return float(fit)
    L = build_second_difference(Pf.shape[0])
    return float(fit + mu * np.sum((L @ Pf) ** 2))


def stationarity_residual(op, control, trajectory):
    """Frobenius norm of the normal-equation residual ``B^T(BP - V) + mu Pen P``."""
    B = op.basis.entries
    P = np.asarray(getattr(control, "points", control), dtype=np.float64)
    V = np.asarray(trajectory, dtype=np.float64)
    Pf = P.reshape(P.shape[0], -1)
    Vf = V.reshape(V.shape[0], -1)
    g = B.T @ (B @ Pf - Vf) + op.mu * (op.penalty @ Pf)
    return float(np.linalg.norm(g))

