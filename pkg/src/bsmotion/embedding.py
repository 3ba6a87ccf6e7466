"""Multi-level hierarchical embedding of control grids.

A control grid with ``k_s`` rows is split, level by level, into the part that
the next coarser resolution can express through a transport operator and a
high-frequency residual it cannot.  All levels are linear in the input, so
the whole decomposition is one stacked matrix ``W`` applied to the grid.
"""

from dataclasses import dataclass, field

import numpy as np

from .solver import DEFAULT_MU, ControlGrid, build_fitting_operator
from .spline import uniform_basis_matrix

__all__ = [
    "DEFAULT_SCHEDULE",
    "DEFAULT_T_PRIME",
    "PINV_RCOND",
    "MAX_TRANSPORT_COND",
    "IllConditionedTransportError",
    "LevelSchedule",
    "TransportOperator",
    "EmbeddingBasis",
    "EmbeddingStack",
    "build_transport",
    "pad_control_points",
    "build_embedding_basis",
    "embed",
    "reconstruct_from_embedding",
]

DEFAULT_SCHEDULE = (17, 15, 13, 11, 9, 7, 5, 4)
DEFAULT_T_PRIME = 16
PINV_RCOND = 1e-10
MAX_TRANSPORT_COND = 1e10


class IllConditionedTransportError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LevelSchedule:
    """Strictly decreasing control-point counts, finest first."""

    counts: tuple = DEFAULT_SCHEDULE
    reference_frames: int = DEFAULT_T_PRIME
    degree: int = 3

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) < 2:
            raise ValueError("a level schedule needs at least two counts")
        if any(a <= b for a, b in zip(counts, counts[1:])):
            raise ValueError(f"schedule must be strictly decreasing, got {counts}")
        if counts[-1] < self.degree + 1:
            raise ValueError(
                f"coarsest level needs at least {self.degree + 1} control points"
            )
        if self.reference_frames < 1:
            raise ValueError("reference_frames must be positive")

    @property
    def finest(self):
        return self.counts[0]

    @property
    def coarsest(self):
        return self.counts[-1]

    @property
    def total_rows(self):
        return sum(self.counts)

    @property
    def n_levels(self):
        return len(self.counts)


@dataclass(frozen=True)
class TransportOperator:
    """Lift from ``k_coarse`` to ``k_fine`` control points, with its pseudo-inverse."""

    matrix: np.ndarray
    pseudo_inverse: np.ndarray

    @property
    def projector(self):
        """Orthogonal projector ``T T^+`` onto the range of the transport."""
        return self.matrix @ self.pseudo_inverse

    @property
    def condition_number(self):
        return float(np.linalg.cond(self.matrix))


@dataclass(frozen=True)
class EmbeddingBasis:
    """Stacked ``(sum k_i) x k_s`` matrix and the transports it was built from."""

    matrix: np.ndarray
    schedule: LevelSchedule
    transports: tuple = field(repr=False)
    mu: float = DEFAULT_MU

    @property
    def shape(self):
        return self.matrix.shape

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


@dataclass(frozen=True)
class EmbeddingStack:
    """Residuals ``[R_s, ..., R_1]`` (finest first) plus the coarsest grid."""

    residuals: list
    coarsest: np.ndarray
    basis: EmbeddingBasis = field(repr=False)

    @property
    def schedule(self):
        return self.basis.schedule

    def stacked(self):
        """All blocks concatenated along the control axis, as ``W @ P`` would give."""
        return np.concatenate(list(self.residuals) + [self.coarsest], axis=0)

    @classmethod
    def from_stacked(cls, stacked, basis):
        stacked = np.asarray(stacked, dtype=np.float64)
        counts = basis.schedule.counts
        if stacked.shape[0] != sum(counts):
            raise ValueError(
                f"stacked embedding has {stacked.shape[0]} rows, schedule "
                f"{counts} needs {sum(counts)}"
            )
        blocks = np.split(stacked, np.cumsum(counts)[:-1], axis=0)
        return cls(residuals=blocks[:-1], coarsest=blocks[-1], basis=basis)


def build_transport(k_fine, k_coarse, t_prime=DEFAULT_T_PRIME, mu=DEFAULT_MU, d=3):
    """``T = O_{T', k_fine} B_{T', k_coarse}``: evaluate coarse, refit fine.

    The pseudo-inverse comes from an SVD with singular values below
    ``PINV_RCOND`` times the largest treated as zero.
    """
    if k_fine < k_coarse:
        raise ValueError(f"k_fine={k_fine} must be >= k_coarse={k_coarse}")
    fine_op = build_fitting_operator(uniform_basis_matrix(t_prime, k_fine, d), mu)
    coarse_basis = uniform_basis_matrix(t_prime, k_coarse, d)
    matrix = fine_op.operator_matrix @ coarse_basis.entries
    s = np.linalg.svd(matrix, compute_uv=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > MAX_TRANSPORT_COND:
        raise IllConditionedTransportError(
            f"transport {k_coarse}->{k_fine} at T'={t_prime} has condition "
            f"number {cond:.3g} > {MAX_TRANSPORT_COND:g}"
        )
    pinv = np.linalg.pinv(matrix, rcond=PINV_RCOND)
    matrix.setflags(write=False)
    pinv.setflags(write=False)
    return TransportOperator(matrix=matrix, pseudo_inverse=pinv)


def pad_control_points(control, k_target):
    """Append copies of the last control point until there are ``k_target`` rows."""
    is_grid = isinstance(control, ControlGrid)
    P = control.points if is_grid else np.asarray(control, dtype=np.float64)
    k = P.shape[0]
    if k_target < k:
        raise ValueError(f"cannot pad {k} control points down to {k_target}")
    if k_target > k:
        tail = np.repeat(P[-1:], k_target - k, axis=0)
        P = np.concatenate([P, tail], axis=0)
    if is_grid:
        return ControlGrid(P, degree=control.degree,
                           source_frame_count=control.source_frame_count)
    return P


def build_embedding_basis(schedule=None, mu=DEFAULT_MU):
    """Stack residual projectors and the chained coarse projection into ``W``.

    Rows, top to bottom: ``(I - T_s T_s^+)``, ``(I - T_{s-1} T_{s-1}^+) T_s^+``,
    ..., and finally ``T_1^+ ... T_s^+``.
    """
    if schedule is None:
        schedule = LevelSchedule()
    counts = schedule.counts
    transports = tuple(
        build_transport(fine, coarse, schedule.reference_frames, mu, schedule.degree)
        for fine, coarse in zip(counts, counts[1:])
    )
    chain = np.eye(counts[0])
    blocks = []
    for k_fine, tr in zip(counts, transports):
        blocks.append((np.eye(k_fine) - tr.projector) @ chain)
        chain = tr.pseudo_inverse @ chain
    blocks.append(chain)
    W = np.concatenate(blocks, axis=0)
    W.setflags(write=False)
    return EmbeddingBasis(matrix=W, schedule=schedule, transports=transports, mu=mu)


def _points(control):
    return control.points if isinstance(control, ControlGrid) else np.asarray(
        control, dtype=np.float64)


def embed(control, basis):
    """Embed a ``k_s``-row control grid as one product ``W @ P``, split per level."""
    P = _points(control)
    k_s = basis.schedule.finest
    if P.shape[0] != k_s:
        raise ValueError(
            f"control grid has {P.shape[0]} rows; the schedule expects {k_s} "
            "(pad first)"
        )
    flat = P.reshape(k_s, -1)
    stacked = (basis.matrix @ flat).reshape((basis.matrix.shape[0],) + P.shape[1:])
    return EmbeddingStack.from_stacked(stacked, basis)


def reconstruct_from_embedding(stack):
    """Rebuild the finest grid: ``P_i = T_i P_{i-1} + R_i`` from the coarsest up."""
    basis = stack.basis
    counts = basis.schedule.counts
    if len(stack.residuals) != len(counts) - 1:
        raise ValueError("residual count does not match the schedule")
    P = np.asarray(stack.coarsest, dtype=np.float64)
    if P.shape[0] != counts[-1]:
        raise ValueError("coarsest block does not match the schedule")
    trailing = P.shape[1:]
    for tr, R, k in zip(reversed(basis.transports), reversed(stack.residuals),
                        reversed(counts[:-1])):
        R = np.asarray(R, dtype=np.float64)
        if R.shape != (k,) + trailing:
            raise ValueError(f"residual block shape {R.shape} != {(k,) + trailing}")
        P = (tr.matrix @ P.reshape(P.shape[0], -1)).reshape((k,) + trailing) + R
    return ControlGrid(P, degree=basis.schedule.degree)
