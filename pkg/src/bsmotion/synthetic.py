"""Synthetic band-limited motion for the ablation and benchmark harnesses."""

import numpy as np

from .sampling import MeshSequence

__all__ = ["band_limited_trajectory", "grid_mesh", "synthetic_mesh_sequence",
           "synthetic_suite"]


def band_limited_trajectory(n_frames, n_points, rng, max_cycles=2.0, n_terms=3,
                            amplitude=0.1):
    """Sum of ``n_terms`` random sinusoids per point and coordinate.

    Frequencies are at most ``max_cycles`` periods over the sequence, which
    runs over ``t`` in ``[0, 1]``.  Displacements start at zero in frame 0.
    """
    t = np.linspace(0.0, 1.0, n_frames) if n_frames > 1 else np.zeros(1)
    shape = (n_terms, n_points, 3)
    freq = rng.uniform(0.25, max_cycles, size=shape)
    phase = rng.uniform(0.0, 2 * np.pi, size=shape)
    amp = rng.uniform(0.2, 1.0, size=shape) * amplitude / n_terms
    arg = 2 * np.pi * freq[None] * t[:, None, None, None] + phase[None]
    V = np.sum(amp[None] * (np.sin(arg) - np.sin(phase)[None]), axis=1)
    return V


def grid_mesh(rows, cols, extent=0.9):
    """Flat ``rows x cols`` vertex grid in the z=0 plane, two triangles per cell."""
    x = np.linspace(-extent, extent, cols)
    y = np.linspace(-extent, extent, rows)
    xx, yy = np.meshgrid(x, y)
    verts = np.stack([xx.ravel(), yy.ravel(), np.zeros(rows * cols)], axis=1)
    idx = np.arange(rows * cols).reshape(rows, cols)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    faces = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return verts, faces


def synthetic_mesh_sequence(n_frames, rng, rows=6, cols=6, max_cycles=2.0,
                            sequence_id="synthetic"):
    verts, faces = grid_mesh(rows, cols)
    deltas = band_limited_trajectory(n_frames, len(verts), rng, max_cycles)
    return MeshSequence(verts, faces, deltas, sequence_id=sequence_id)


def synthetic_suite(count, seed=0, t_range=(5, 200), rows=6, cols=6, max_cycles=2.0):
    """``count`` mesh sequences with frame counts uniform in ``t_range`` (inclusive)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        T = int(rng.integers(t_range[0], t_range[1] + 1))
        out.append(synthetic_mesh_sequence(T, rng, rows, cols, max_cycles,
                                           sequence_id=f"synth_{i:04d}"))
    return out
