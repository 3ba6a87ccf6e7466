"""scikit-learn style wrappers around the fitting and embedding primitives.

Both estimators follow the transformer protocol (``fit``/``transform``/
``inverse_transform``, ``get_params``/``set_params``) so they drop into
pipelines and ``clone``.  Inputs are arrays with a leading frame (or
control-point) axis; any trailing shape is carried through.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .embedding import (
    DEFAULT_SCHEDULE,
    DEFAULT_T_PRIME,
    EmbeddingStack,
    LevelSchedule,
    build_embedding_basis,
    embed,
    pad_control_points,
    reconstruct_from_embedding,
)
from .metrics import mean_l1_error
from .solver import (
    DEFAULT_MU,
    MIN_UNDERDETERMINED_MU,
    ControlGrid,
    UnderdeterminedError,
    cached_fitting_operator,
    fit_variable_sequence,
)
from .solver import reproject as _reproject
from .validation import check_controls, check_trajectory

__all__ = ["BSplineMotionEncoder", "MultilevelEmbedding"]


class BSplineMotionEncoder(TransformerMixin, BaseEstimator):
    """Compress trajectories of any length into a fixed number of control points.

    Parameters
    ----------
    n_controls : int, default=16
        Control points per trajectory.
    degree : int, default=3
    mu : float, default=1e-3
        Regularization weight; forced positive when a sequence has fewer
        frames than ``n_controls``.
    regularizer : {"laplacian", "ridge"}, default="laplacian"
        Penalty on the control points: second differences or plain magnitude.
    n_frames_out : int or None, default=None
        Length produced by :meth:`inverse_transform`; ``None`` reuses the
        frame count seen in :meth:`fit`.

    Attributes
    ----------
    n_frames_in_ : int
        Frame count of the trajectory passed to ``fit``.
    operator_ : FittingOperator
        Factored operator for ``n_frames_in_`` frames (``None`` for one frame).
    """

    def __init__(self, n_controls=16, degree=3, mu=DEFAULT_MU, regularizer="laplacian",
                 n_frames_out=None):
        self.n_controls = n_controls
        self.degree = degree
        self.mu = mu
        self.regularizer = regularizer
        self.n_frames_out = n_frames_out

    def _validate_params(self):
        if self.regularizer not in ("laplacian", "ridge"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.degree < 1 or self.n_controls < self.degree + 1:
            raise ValueError("need degree >= 1 and n_controls >= degree + 1")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")

    def fit(self, X, y=None):
        self._validate_params()
        V = check_trajectory(X)
        self.n_frames_in_ = V.shape[0]
        T = self.n_frames_in_
        if T == 1 and self.regularizer == "laplacian":
            self.operator_ = None
        else:
            mu = self.mu
            if T < self.n_controls:
                if mu == 0:
                    raise UnderdeterminedError(
                        f"underdetermined fit: {T} frames < {self.n_controls} "
                        "control points requires mu > 0"
                    )
                mu = max(mu, MIN_UNDERDETERMINED_MU)
            self.operator_ = cached_fitting_operator(
                T, self.n_controls, self.degree, mu, self.regularizer)
        return self

    def transform(self, X):
        """Control points ``(n_controls, ...)`` for a trajectory ``(T, ...)``."""
        check_is_fitted(self, "n_frames_in_")
        grid = fit_variable_sequence(X, self.n_controls, self.degree, self.mu,
                                     self.regularizer)
        return grid.points

    def inverse_transform(self, X, n_frames=None):
        """Reproject control points to ``n_frames`` uniformly spaced frames."""
        check_is_fitted(self, "n_frames_in_")
        P = check_controls(X)
        if P.shape[0] != self.n_controls:
            raise ValueError(f"expected {self.n_controls} control points, got {P.shape[0]}")
        T = n_frames or self.n_frames_out or self.n_frames_in_
        return _reproject(ControlGrid(P, degree=self.degree), T)

    def score(self, X, y=None):
        """Negative mean L1 error of the fit-and-reproject round trip on ``X``."""
        V = check_trajectory(X)
        recon = self.inverse_transform(self.transform(V), n_frames=V.shape[0])
        return -mean_l1_error(recon, V)


class MultilevelEmbedding(TransformerMixin, BaseEstimator):
    """Invertible multilevel re-coding of control grids.

    ``transform`` pads a grid to the finest scheduled count by repeating its
    last control point and returns the stacked ``(sum(schedule), ...)``
    embedding; ``inverse_transform`` recovers the padded grid.

    Attributes
    ----------
    basis_ : EmbeddingBasis
        The stacked matrix ``W`` and its transports.
    """

    def __init__(self, schedule=DEFAULT_SCHEDULE, t_prime=DEFAULT_T_PRIME,
                 mu=DEFAULT_MU, degree=3):
        self.schedule = schedule
        self.t_prime = t_prime
        self.mu = mu
        self.degree = degree

    def fit(self, X=None, y=None):
        sched = LevelSchedule(tuple(self.schedule), self.t_prime, self.degree)
        self.basis_ = build_embedding_basis(sched, self.mu)
        if X is not None:
            self._check_input(X)
        return self

    def _check_input(self, X):
        P = check_controls(X)
        if P.shape[0] > self.basis_.schedule.finest:
            raise ValueError(
                f"{P.shape[0]} control points exceed the finest level "
                f"{self.basis_.schedule.finest}"
            )
        return P

    def transform(self, X):
        check_is_fitted(self, "basis_")
        P = self._check_input(X)
        padded = pad_control_points(P, self.basis_.schedule.finest)
        return embed(padded, self.basis_).stacked()

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        stack = EmbeddingStack.from_stacked(np.asarray(X, dtype=np.float64), self.basis_)
        return reconstruct_from_embedding(stack).points
