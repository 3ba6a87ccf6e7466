"""Motion-quality metrics and the linear-interpolation baseline."""

from dataclasses import dataclass

import numpy as np

from .solver import ControlGrid
from .spline import uniform_basis_matrix

__all__ = [
    "MetricConfig",
    "charbonnier",
    "correspondence_loss",
    "rigidity_loss",
    "total_weighted_loss",
    "mean_l1_error",
    "batch_mean_l1_error",
    "linear_baseline",
    "baseline_indices",
]


@dataclass(frozen=True)
class MetricConfig:
    delta: float = 1e-3
    lambda1: float = 0.3
    lambda2: float = 0.1
    knn_k: int = 8
    # "deformed": distance between deformed positions; "displacement": ||d_i - d_j||.
    rigidity_mode: str = "deformed"

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.rigidity_mode not in ("deformed", "displacement"):
            raise ValueError(f"unknown rigidity_mode {self.rigidity_mode!r}")


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def charbonnier(pred, target, delta=1e-3, batched=False):
    """``sqrt(||pred - target||_F^2 + delta^2)``, averaged over instances.

    With ``batched=False`` the whole array is one instance; with
    ``batched=True`` axis 0 indexes instances.
    """
    pred, target = _pair(pred, target)
    diff = pred - target
    if not batched:
        return float(np.sqrt(np.sum(diff * diff) + delta * delta))
    sq = np.sum((diff * diff).reshape(diff.shape[0], -1), axis=1)
    return float(np.mean(np.sqrt(sq + delta * delta)))


def correspondence_loss(pred_controls, gt_traj, config=MetricConfig()):
    """Charbonnier distance between reprojected controls and the target trajectory."""
    if not isinstance(pred_controls, ControlGrid):
        pred_controls = ControlGrid(pred_controls)
    gt = np.asarray(gt_traj, dtype=np.float64)
    P = pred_controls.points
    B = uniform_basis_matrix(gt.shape[0], P.shape[0], pred_controls.degree).entries
    recon = (B @ P.reshape(P.shape[0], -1)).reshape((gt.shape[0],) + P.shape[1:])
    return charbonnier(recon, gt, config.delta)


def _edge_lengths(traj, base_points, neighbors, mode):
    i = np.arange(neighbors.shape[0])[:, None]
    if mode == "deformed":
        pos = base_points[None] + traj
    else:
        pos = traj
    diff = pos[:, i, :] - pos[:, neighbors, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def rigidity_loss(pred_traj, base_points, neighbors, config=MetricConfig()):
    """Mean Charbonnier penalty on frame-to-frame change of neighbour distances.

    ``r_t(i, j)`` is the distance between point ``i`` and its neighbour ``j``
    at frame ``t``.  The result is exactly ``delta`` when no distance changes.
    """
    traj = np.asarray(pred_traj, dtype=np.float64)
    base = np.asarray(base_points, dtype=np.float64)
    nbrs = np.asarray(neighbors, dtype=np.int64)
    if traj.ndim != 3 or traj.shape[1:] != base.shape:
        raise ValueError(
            f"trajectory {traj.shape} does not match base points {base.shape}"
        )
    if traj.shape[0] < 2:
        raise ValueError("rigidity needs at least two frames")
    if nbrs.ndim != 2 or nbrs.shape[0] != base.shape[0]:
        raise ValueError("neighbors must be (n, K)")
    r = _edge_lengths(traj, base, nbrs, config.rigidity_mode)
    dr = np.diff(r, axis=0)
    return float(np.mean(np.sqrt(dr * dr + config.delta ** 2)))


def total_weighted_loss(fit, corr, rigid, config=MetricConfig(), kl=0.0):
    """``fit + lambda1 * corr + lambda2 * rigid``.

    ``kl`` must stay zero: there is no latent distribution to regularize here.
    """
    if kl:
        raise ValueError("KL term is not supported")
    vals = np.array([fit, corr, rigid], dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError("loss components must be finite")
    return float(fit + config.lambda1 * corr + config.lambda2 * rigid)


def mean_l1_error(pred_traj, gt_traj):
    """Mean absolute error per coordinate, frame and point of one sequence."""
    pred, gt = _pair(pred_traj, gt_traj)
    return float(np.mean(np.abs(pred - gt)))


def batch_mean_l1_error(pairs):
    """Per-sequence mean L1, then averaged over sequences of any length."""
    errs = [mean_l1_error(p, g) for p, g in pairs]
    if not errs:
        raise ValueError("no sequences")
    return float(np.mean(errs))


def baseline_indices(n_frames, samples=16):
    """Kept frames ``round(i (T-1) / (samples-1))``, half rounded up, deduplicated."""
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if n_frames < 2:
        raise ValueError("linear baseline needs at least two frames")
    pos = np.arange(samples) * (n_frames - 1) / (samples - 1)
    return np.unique(np.floor(pos + 0.5).astype(np.int64))


def linear_baseline(traj, samples=16):
    """Keep ``samples`` evenly spaced frames and linearly interpolate the rest."""
    V = np.asarray(traj, dtype=np.float64)
    T = V.shape[0]
    keep = baseline_indices(T, samples)
    frames = np.arange(T)
    # Segment containing each frame, then the blend weight inside it.
    seg = np.clip(np.searchsorted(keep, frames, side="right") - 1, 0, len(keep) - 2)
    lo = keep[seg]
    hi = keep[seg + 1]
    w = ((frames - lo) / (hi - lo)).reshape((T,) + (1,) * (V.ndim - 1))
    return (1.0 - w) * V[lo] + w * V[hi]
