"""Clamped uniform B-spline knots and basis evaluation (Cox--de Boor)."""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KnotVector",
    "BasisMatrix",
    "build_clamped_uniform_knots",
    "basis_values",
    "basis_derivative_values",
    "build_basis_matrix",
    "uniform_times",
    "uniform_basis_matrix",
]

# Slack for the domain check; sample times produced by arithmetic on [0, 1]
# may land a few ulps outside.
_DOMAIN_EPS = 1e-12


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot vector ``u_0 <= ... <= u_{m-1}`` with ``m = k + d + 1``."""

    values: np.ndarray
    degree: int
    control_count: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.shape != (self.control_count + self.degree + 1,):
            raise ValueError(
                f"knot vector needs {self.control_count + self.degree + 1} "
                f"entries, got {values.shape}"
            )
        if np.any(np.diff(values) < 0):
            raise ValueError("knot vector must be non-decreasing")

    @property
    def domain(self):
        d = self.degree
        return float(self.values[d]), float(self.values[-1 - d])

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class BasisMatrix:
    """Sampled basis: row ``t`` holds every basis function at ``sample_times[t]``."""

    entries: np.ndarray
    sample_times: np.ndarray
    knots: KnotVector = field(repr=False)

    def __post_init__(self):
        for name in ("entries", "sample_times"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def frame_count(self):
        return self.entries.shape[0]

    @property
    def control_count(self):
        return self.entries.shape[1]

    @property
    def degree(self):
        return self.knots.degree

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def build_clamped_uniform_knots(k, d=3):
    """Clamped knot vector on ``[0, 1]`` with uniformly spaced interior knots.

    Parameters
    ----------
    k : int
        Number of control points.
    d : int
        Polynomial degree.

    Returns
    -------
    KnotVector

    Examples
    --------
    >>> build_clamped_uniform_knots(5, 3).values.tolist()
    [0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]
    """
    k, d = int(k), int(d)
    if d < 1:
        raise ValueError(f"degree must be >= 1, got {d}")
    if k < d + 1:
        raise ValueError(
            f"need at least d + 1 = {d + 1} control points for degree {d}, got k={k}"
        )
    n_interior = k - d - 1
    interior = np.arange(1, n_interior + 1, dtype=np.float64) / (n_interior + 1)
    values = np.concatenate([np.zeros(d + 1), interior, np.ones(d + 1)])
    return KnotVector(values=values, degree=d, control_count=k)


def _check_times(knots, t):
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t.ndim != 1:
        raise ValueError("sample times must be a scalar or 1-D array")
    if not np.all(np.isfinite(t)):
        raise ValueError("sample times must be finite")
    lo, hi = knots.domain
    if np.any(t < lo - _DOMAIN_EPS) or np.any(t > hi + _DOMAIN_EPS):
        raise ValueError(f"sample times must lie in the clamped domain [{lo}, {hi}]")
    return np.clip(t, lo, hi)


def _degree_zero(knots, t, side):
    """Indicator functions ``N_{i,0}`` for every knot span, shape ``(len(t), m-1)``.

    ``side="right"`` uses half-open spans ``[u_i, u_{i+1})``; ``side="left"``
    uses ``(u_i, u_{i+1}]`` so that evaluation at an interior knot returns the
    limit from the left.  Either way the right (left) end of the domain is
    assigned to the last (first) non-empty span.
    """
    u = knots.values
    d = knots.degree
    k = knots.control_count
    if side == "right":
        span = np.searchsorted(u, t, side="right") - 1
    elif side == "left":
        span = np.searchsorted(u, t, side="left") - 1
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    span = np.clip(span, d, k - 1)
    out = np.zeros((t.size, len(u) - 1))
    out[np.arange(t.size), span] = 1.0
    return out


def _safe_ratio(num, den):
    # Cox--de Boor convention 0/0 := 0 for repeated knots.
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _basis_table(knots, t, side):
    """All basis functions of degree 0..d at ``t``: list indexed by degree."""
    u = knots.values
    m = len(u)
    tab = [_degree_zero(knots, t, side)]
    tt = t[:, None]
    for p in range(1, knots.degree + 1):
        prev = tab[-1]
        n = m - p - 1
        i = np.arange(n)
        left = _safe_ratio(tt - u[i], u[i + p] - u[i])
        right = _safe_ratio(u[i + p + 1] - tt, u[i + p + 1] - u[i + 1])
        tab.append(left * prev[:, :n] + right * prev[:, 1 : n + 1])
    return tab


def basis_values(knots, t, side="right"):
    """Evaluate ``[N_{0,d}(t), ..., N_{k-1,d}(t)]`` by the Cox--de Boor recursion.

    Parameters
    ----------
    knots : KnotVector
    t : float or array_like
        Parameter value(s) in the clamped domain.
    side : {"right", "left"}
        Which one-sided limit to return at an interior knot.  The domain end
        points always return the interpolating limit.

    Returns
    -------
    ndarray
        Shape ``(k,)`` for scalar ``t``, otherwise ``(len(t), k)``.
    """
    scalar = np.ndim(t) == 0
    tt = _check_times(knots, t)
    vals = _basis_table(knots, tt, side)[-1]
    return vals[0] if scalar else vals


def basis_derivative_values(knots, t, order=1, side="right"):
    """Derivatives of the basis functions of the given order at ``t``.

    Uses ``N'_{i,p} = p/(u_{i+p}-u_i) N_{i,p-1} - p/(u_{i+p+1}-u_{i+1}) N_{i+1,p-1}``
    applied ``order`` times down the degree table.
    """
    order = int(order)
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    if order > knots.degree:
        raise ValueError(
            f"derivative order {order} exceeds spline degree {knots.degree}"
        )
    scalar = np.ndim(t) == 0
    tt = _check_times(knots, t)
    tab = _basis_table(knots, tt, side)
    u = knots.values
    d = knots.degree
    # ders holds the order-r derivative of the degree (d - order + r) basis.
    ders = tab[d - order]
    for r in range(1, order + 1):
        p = d - order + r
        n = len(u) - p - 1
        i = np.arange(n)
        a = _safe_ratio(np.float64(p), u[i + p] - u[i])
        b = _safe_ratio(np.float64(p), u[i + p + 1] - u[i + 1])
        ders = a * ders[:, :n] - b * ders[:, 1 : n + 1]
    return ders[0] if scalar else ders


def uniform_times(n_frames):
    """Frame ``t`` of ``T`` mapped to ``t / (T - 1)``; a single frame maps to 0."""
    n_frames = int(n_frames)
    if n_frames < 1:
        raise ValueError(f"need at least one frame, got {n_frames}")
    if n_frames == 1:
        return np.zeros(1)
    return np.linspace(0.0, 1.0, n_frames)


def build_basis_matrix(k, d, sample_times):
    """Stack basis rows for each sample time into a ``T x k`` matrix."""
    knots = build_clamped_uniform_knots(k, d)
    times = np.atleast_1d(np.asarray(sample_times, dtype=np.float64))
    if times.size == 0:
        raise ValueError("sample_times must not be empty")
    entries = basis_values(knots, times)
    return BasisMatrix(entries=entries, sample_times=times, knots=knots)


def uniform_basis_matrix(n_frames, k, d=3):
    """Basis matrix sampled at ``n_frames`` evenly spaced times on ``[0, 1]``."""
    return build_basis_matrix(k, d, uniform_times(n_frames))
